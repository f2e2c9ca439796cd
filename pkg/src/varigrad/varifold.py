"""Discrete varifolds of shape graphs and their kernel distance.

Each edge (p, q) becomes one atom: centroid (v_p + v_q) / 2, unit tangent
(v_q - v_p) / l and mass l = |v_q - v_p|. Two varifolds are compared with
the kernel

    k((x, u), (y, w)) = exp(-a |x - y|^2) * <u, w>^2

(Gaussian in space, Binet on directions), so the inner product of two
discrete varifolds is the double sum over atom pairs weighted by masses.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .geometry import DegenerateEdge, ShapeGraph, bounding_diameter, default_eps_len

CLAMP_LEN = 1e-12


@dataclass(frozen=True)
class KernelConfig:
    a: float

    def __post_init__(self):
        if not (np.isfinite(self.a) and self.a > 0):
            raise ValueError(f"kernel coefficient a must be positive and finite, got {self.a}")

    @property
    def sigma(self) -> float:
        return float(np.sqrt(0.5 / self.a))


def default_kernel(template: ShapeGraph, sigma_ratio: float = 0.2) -> KernelConfig:
    """Gaussian width sigma = sigma_ratio * diameter(template), a = 1 / (2 sigma^2)."""
    if not sigma_ratio > 0:
        raise ValueError(f"sigma_ratio must be positive, got {sigma_ratio}")
    sigma = sigma_ratio * bounding_diameter(template)
    return KernelConfig(1.0 / (2.0 * sigma * sigma))


@dataclass(frozen=True, eq=False)
class DiscreteVarifold:
    centroids: np.ndarray  # (m, 3)
    tangents: np.ndarray  # (m, 3), unit rows (zero rows only for clamped edges)
    masses: np.ndarray  # (m,)
    source_edge: np.ndarray  # (m,)

    def __len__(self):
        return len(self.masses)

    def scaled(self, factor: float) -> "DiscreteVarifold":
        return DiscreteVarifold(self.centroids, self.tangents, self.masses * factor, self.source_edge)

    def atoms(self):
        """Atoms as a sorted list of tuples; orientation is canonicalized."""
        u = self.tangents.copy()
        for r in u:
            nz = np.flatnonzero(r)
            if nz.size and r[nz[0]] < 0:
                r *= -1
        rows = np.concatenate([self.centroids, u, self.masses[:, None]], axis=1)
        return sorted(map(tuple, rows.tolist()))


def _edge_frames(vertices: np.ndarray, edges: np.ndarray, clamp: bool):
    t = vertices[edges[:, 1]] - vertices[edges[:, 0]]
    lengths = np.linalg.norm(t, axis=1)
    if clamp:
        ok = lengths > CLAMP_LEN
        u = np.zeros_like(t)
        u[ok] = t[ok] / lengths[ok, None]
        lengths = np.maximum(lengths, CLAMP_LEN)
    else:
        u = t / lengths[:, None]
    c = 0.5 * (vertices[edges[:, 0]] + vertices[edges[:, 1]])
    return c, u, lengths


def lift(g: ShapeGraph, clamp: bool = False) -> DiscreteVarifold:
    """Varifold of ``g``, one atom per edge in edge order.

    With ``clamp=True`` edges shorter than 1e-12 get mass 1e-12 and a zero
    tangent, so they contribute nothing to any kernel sum; otherwise such
    edges raise ``DegenerateEdge``.
    """
    if not clamp:
        lengths = g.edge_lengths()
        eps = default_eps_len(g)
        short = np.flatnonzero(lengths <= eps)
        if short.size:
            raise DegenerateEdge(f"edge {int(short[0])} has length {lengths[short[0]]:.3g}")
    c, u, l = _edge_frames(g.vertices, g.edges, clamp)
    return DiscreteVarifold(c, u, l, np.arange(g.n_edges))


def _kernel_block(c1, u1, l1, c2, u2, l2, a):
    diff = c1[:, None, :] - c2[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-a * sq) * (u1 @ u2.T) ** 2 * np.outer(l1, l2)


def _rows(n: int, threads: int):
    bounds = np.linspace(0, n, min(threads, n) + 1).astype(int)
    return [slice(s, e) for s, e in zip(bounds[:-1], bounds[1:]) if e > s]


def inner(mu: DiscreteVarifold, nu: DiscreteVarifold, k: KernelConfig, threads: int = 1) -> float:
    """sum_ij exp(-a |c_i - c_j|^2) <u_i, u_j>^2 l_i l_j.

    ``threads > 1`` splits the outer index across worker threads; partial
    sums are added in a fixed order.
    """
    if threads <= 1 or len(mu) < 2 * threads:
        return float(_kernel_block(mu.centroids, mu.tangents, mu.masses, nu.centroids, nu.tangents, nu.masses, k.a).sum())

    def part(s):
        return _kernel_block(
            mu.centroids[s], mu.tangents[s], mu.masses[s], nu.centroids, nu.tangents, nu.masses, k.a
        ).sum()

    with ThreadPoolExecutor(threads) as ex:
        return float(sum(ex.map(part, _rows(len(mu), threads))))


def varifold_dist_sq(mu: DiscreteVarifold, nu: DiscreteVarifold, k: KernelConfig, threads: int = 1) -> float:
    d = inner(mu, mu, k, threads) + inner(nu, nu, k, threads) - 2.0 * inner(mu, nu, k, threads)
    return max(d, 0.0)


def dist_sq(g1: ShapeGraph, g2: ShapeGraph, k: KernelConfig, clamp: bool = False, threads: int = 1) -> float:
    """Squared varifold distance; round-off below zero is clamped to 0."""
    return varifold_dist_sq(lift(g1, clamp), lift(g2, clamp), k, threads)


def _atom_grads(c1, u1, l1, c2, u2, l2, a):
    """Derivatives of the squared distance w.r.t. the atoms of the first varifold.

    Returns (dc, du, dl) for every atom of varifold 1.
    """
    c = np.concatenate([c1, c2])
    u = np.concatenate([u1, u2])
    sl = np.concatenate([l1, -l2])  # signed masses: mu - nu

    diff = c1[:, None, :] - c[None, :, :]
    g = np.exp(-a * np.einsum("ijk,ijk->ij", diff, diff))
    dot = u1 @ u.T
    w = g * sl[None, :]  # (m1, m1+m2)

    kern = w * dot**2  # exp * <u,u'>^2 * l'
    dl = 2.0 * kern.sum(axis=1)
    dc = -4.0 * a * l1[:, None] * np.einsum("ij,ijk->ik", kern, diff)
    du = 4.0 * l1[:, None] * ((w * dot) @ u)
    return dc, du, dl


def grad_dist_sq(g: ShapeGraph, other: ShapeGraph, k: KernelConfig, clamp: bool = False) -> np.ndarray:
    """Gradient of ``dist_sq(g, other)`` with respect to the vertices of ``g``.

    Returns an array shaped like ``g.vertices``. Edge (p, q) with
    c = (v_p + v_q)/2, l = |v_q - v_p|, u = (v_q - v_p)/l contributes

        dv_q = dc/2 + dl u + (I - u u^T) du / l
        dv_p = dc/2 - dl u - (I - u u^T) du / l
    """
    c1, u1, l1 = _edge_frames(g.vertices, g.edges, clamp)
    if not clamp and np.any(l1 <= default_eps_len(g)):
        raise DegenerateEdge("degenerate edge in gradient target")
    c2, u2, l2 = _edge_frames(other.vertices, other.edges, clamp)
    dc, du, dl = _atom_grads(c1, u1, l1, c2, u2, l2, k.a)
    du_perp = (du - u1 * np.sum(du * u1, axis=1, keepdims=True)) / l1[:, None]
    along = dl[:, None] * u1 + du_perp
    out = np.zeros_like(g.vertices)
    np.add.at(out, g.edges[:, 1], 0.5 * dc + along)
    np.add.at(out, g.edges[:, 0], 0.5 * dc - along)
    return out


@dataclass
class GradCheckReport:
    max_rel_err: float
    max_abs_err: float
    analytic: np.ndarray
    numeric: np.ndarray
    tol: float

    @property
    def passed(self) -> bool:
        return bool(self.max_rel_err <= self.tol)


def fd_grad(f, x: np.ndarray, h: float) -> np.ndarray:
    """Central differences of scalar ``f`` at every entry of ``x``."""
    x = np.array(x, dtype=np.float64)
    out = np.zeros_like(x)
    flat, gflat = x.reshape(-1), out.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return out


def rel_err(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    return np.abs(analytic - numeric) / np.maximum(np.abs(numeric), floor)


def check_grad(g1: ShapeGraph, g2: ShapeGraph, k: KernelConfig, h: float = 1e-5, tol: float = 1e-4) -> GradCheckReport:
    """Compare ``grad_dist_sq`` with central differences of ``dist_sq``.

    The finite-difference side evaluates the unclamped distance without the
    nonnegativity clamp so that it stays smooth near zero.
    """
    nu = lift(g2)

    def f(v):
        c, u, l = _edge_frames(v, g1.edges, False)
        mu = DiscreteVarifold(c, u, l, np.arange(len(l)))
        return inner(mu, mu, k) + inner(nu, nu, k) - 2.0 * inner(mu, nu, k)

    ana = grad_dist_sq(g1, g2, k)
    num = fd_grad(f, g1.vertices, h)
    return GradCheckReport(
        max_rel_err=float(rel_err(ana, num).max()),
        max_abs_err=float(np.abs(ana - num).max()),
        analytic=ana,
        numeric=num,
        tol=tol,
    )
