import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import random_curve, star_graph
from oracles import naive_adjacency_norm
from varigrad.datasets import SyntheticSpec, generate, make_reparam_set
from varigrad.features import ConvStack, conv_forward, featurize, load_template, make_template, raw_feature, raw_features, save_template
from varigrad.geometry import ReparamSpec, apply_reparam, bounding_diameter, closed_polyline, polyline
from varigrad.varifold import default_kernel

seeds = st.integers(0, 2**32 - 1)


def test_triangle_adjacency():
    t = make_template(closed_polyline([[0, 0, 0], [1, 0, 0], [0, 1, 0]]))
    assert np.allclose(t.adjacency_norm, np.full((3, 3), 1 / 3), rtol=0, atol=1e-15)


def test_two_vertex_adjacency():
    t = make_template(polyline([[0, 0, 0], [1, 0, 0]]))
    assert np.allclose(t.adjacency_norm, [[0.5, 0.5], [0.5, 0.5]], rtol=0, atol=1e-15)


@given(seeds)
def test_adjacency_matches_naive_and_symmetric(seed):
    g = star_graph(np.random.default_rng(seed), arms=int(seed % 3) + 2, per_arm=3)
    t = make_template(g)
    want = naive_adjacency_norm(g.n_vertices, g.edges.tolist())
    assert np.allclose(t.adjacency_norm, want, rtol=0, atol=1e-15)
    assert np.abs(t.adjacency_norm - t.adjacency_norm.T).max() <= 1e-12
    assert (t.adjacency_norm.sum(axis=1) <= g.n_vertices).all()


def test_template_drops_label_and_is_frozen():
    t = make_template(random_curve(np.random.default_rng(0), 10).with_label(2))
    assert t.shape.label is None
    with pytest.raises(ValueError):
        t.adjacency_norm[0, 0] = 1.0


def test_template_file_roundtrip(tmp_path):
    t = make_template(random_curve(np.random.default_rng(0), 10))
    save_template(tmp_path / "t.json", t, 0.3)
    u, ratio = load_template(tmp_path / "t.json")
    assert u.shape == t.shape and ratio == 0.3
    assert np.array_equal(u.adjacency_norm, t.adjacency_norm)


@pytest.fixture(scope="module")
def setup():
    rng = np.random.default_rng(1)
    t = make_template(random_curve(rng, 20, closed=True))
    return t, default_kernel(t.shape), rng


def test_raw_feature_size_independent_of_input(setup):
    t, k, rng = setup
    for n in (8, 40, 90):
        assert raw_feature(t, random_curve(rng, n), k).shape == (20, 3)


def test_raw_feature_of_template_is_zero(setup):
    t, k, rng = setup
    scale = np.abs(raw_feature(t, random_curve(rng, 20), k)).max()
    assert np.abs(raw_feature(t, t.shape, k)).max() <= 1e-8 * scale


@given(seeds)
def test_raw_feature_permute_flip_invariant(seed):
    rng = np.random.default_rng(seed)
    t = make_template(random_curve(rng, 12))
    k = default_kernel(t.shape)
    g = random_curve(rng, 15)
    h = apply_reparam(g, ReparamSpec(True, True, 1.0, seed))
    F, H = raw_feature(t, g, k), raw_feature(t, h, k)
    assert np.abs(F - H).max() <= 1e-12 * np.abs(F).max()


def test_raw_feature_resampling_bound():
    # measured maximum on this set is about 0.04 for curves, 0.005 for stick figures
    for kind in ("curve", "stickfigure"):
        ds = generate(SyntheticSpec(kind=kind, class_count=4, samples_per_class=4, rng_seed=7))
        t = make_template(ds[0])
        k = default_kernel(t.shape)
        for i, g in enumerate(ds.shapes[1:]):
            F = raw_feature(t, g, k)
            for v in make_reparam_set([g], 2, i).shapes:
                assert np.linalg.norm(raw_feature(t, v, k) - F) <= 0.05 * np.linalg.norm(F)


def test_raw_feature_smooth(setup):
    t, k, rng = setup
    g = random_curve(rng, 30)
    F = raw_feature(t, g, k)
    eps = 1e-6 * bounding_diameter(g)
    for _ in range(5):
        d = rng.standard_normal(g.vertices.shape)
        h = g.with_vertices(g.vertices + eps * d / np.abs(d).max())
        assert np.linalg.norm(raw_feature(t, h, k) - F) <= 1e-3 * np.linalg.norm(F)


def test_raw_features_threads_identical(setup):
    t, k, rng = setup
    shapes = [random_curve(rng, 25) for _ in range(6)]
    assert np.array_equal(raw_features(t, shapes, k), raw_features(t, shapes, k, threads=3))


def test_conv_dims(setup):
    t, k, rng = setup
    conv = ConvStack(t, rng=np.random.default_rng(0))
    assert conv.out_dim == 32 * 20
    assert conv_forward(t, rng.standard_normal((20, 3)), conv).shape == (640,)
    assert conv_forward(t, rng.standard_normal((4, 20, 3)), conv).shape == (4, 640)
    pooled = ConvStack(t, rng=np.random.default_rng(0), pool=True)
    assert pooled.out_dim == 16 * 20
    assert conv_forward(t, rng.standard_normal((20, 3)), pooled).shape == (320,)
    with pytest.raises(ValueError):
        conv_forward(t, np.zeros((19, 3)), conv)


def test_zero_field_zero_bias_gives_zero(setup):
    t, k, rng = setup
    conv = ConvStack(t, rng=np.random.default_rng(0))
    for layer in conv.layers:
        if "b" in layer.params:
            layer.params["b"][:] = 0
    assert not conv_forward(t, np.zeros((20, 3)), conv).any()


def test_identity_layer_on_two_vertex_path():
    t = make_template(polyline([[0, 0, 0], [1, 0, 0]]))
    conv = ConvStack(t, channels=(3, 3), activation="identity")
    conv.layers[0].params["W"][:] = np.eye(3)
    field = np.array([[1.0, 2.0, 3.0], [5.0, -2.0, 1.0]])
    out = conv_forward(t, field, conv)
    assert np.allclose(out, [3, 0, 2, 3, 0, 2], rtol=0, atol=1e-15)


def test_vertex_major_flatten(setup):
    t, k, rng = setup
    conv = ConvStack(t, channels=(3, 4), activation="identity", rng=np.random.default_rng(0))
    field = rng.standard_normal((20, 3))
    z = t.adjacency_norm @ field @ conv.layers[0].params["W"].T + conv.layers[0].params["b"]
    assert np.allclose(conv_forward(t, field, conv), z.reshape(-1))


@given(seeds, st.floats(-3, 3), st.floats(-3, 3))
def test_linear_when_identity_and_no_bias(seed, a, b):
    rng = np.random.default_rng(seed)
    t = make_template(random_curve(rng, 8))
    conv = ConvStack(t, activation="identity", rng=rng, pool=True)
    for layer in conv.layers:
        if "b" in layer.params:
            layer.params["b"][:] = 0
    F1, F2 = rng.standard_normal((2, 8, 3))
    lhs = conv_forward(t, a * F1 + b * F2, conv)
    rhs = a * conv_forward(t, F1, conv) + b * conv_forward(t, F2, conv)
    assert np.allclose(lhs, rhs, rtol=0, atol=1e-10 * (1 + np.abs(rhs).max()))


@given(seeds)
def test_featurize_permutation_invariant(seed):
    rng = np.random.default_rng(seed)
    t = make_template(random_curve(rng, 10))
    k = default_kernel(t.shape)
    conv = ConvStack(t, rng=rng)
    g = random_curve(rng, 12)
    h = apply_reparam(g, ReparamSpec(True, True, 1.0, seed))
    a, b = featurize(t, g, k, conv), featurize(t, h, k, conv)
    assert np.abs(a - b).max() <= 1e-12 * max(np.abs(a).max(), 1e-300)


def test_feature_dim_constant_across_inputs(setup):
    t, k, rng = setup
    conv = ConvStack(t, rng=np.random.default_rng(0))
    dims = {featurize(t, g, k, conv).shape for g in [random_curve(rng, int(n)) for n in rng.integers(64, 97, 5)] + [star_graph(rng)]}
    assert dims == {(640,)}
