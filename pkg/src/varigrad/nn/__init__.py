"""Numpy neural-network pieces with analytic backpropagation.

``models`` and ``train`` depend on the feature extractor and are imported
as submodules (``varigrad.nn.models``, ``varigrad.nn.train``).
"""

from .layers import BatchNorm, Dense, GraphConv, ReLU, Sequential, mlp
from .optim import Adam, AdamConfig, adam_step
