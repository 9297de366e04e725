"""Lattice construction inside a level-set domain.

Nodes live on ``h * Z^d`` (origin fixed at 0).  A node is Interior when the
level-set function is positive there and at every one-step stencil
neighbour; BoundaryBand nodes are the non-interior neighbours of interior
nodes, where boundary data is imposed.  Everything else is Unused and is not
materialised beyond the dense classification array.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .stencil import DirectionSet

UNUSED, INTERIOR, BAND = 0, 1, 2


class EmptyInteriorError(ValueError):
    """No lattice node qualifies as interior; the step is too coarse."""


@dataclass(frozen=True, eq=False)
class Domain:
    name: str
    psi: Callable[[np.ndarray], np.ndarray]
    bounding_box: tuple[tuple[float, ...], tuple[float, ...]]
    exact_distance: Callable[[np.ndarray], np.ndarray] | None = None
    params: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return len(self.bounding_box[0])

    def inside(self, X) -> np.ndarray:
        return self.psi(np.atleast_2d(np.asarray(X, dtype=float))) > 0

    @cached_property
    def grad_bound(self) -> float:
        """Sampled max of |grad psi| over the bounding box (central differences)."""
        rng = np.random.default_rng(0)
        lo, hi = map(np.asarray, self.bounding_box)
        X = lo + (hi - lo) * rng.random((4096, self.dim))
        eps = 1e-6 * float(np.max(hi - lo))
        g2 = np.zeros(len(X))
        for i in range(self.dim):
            dx = np.zeros(self.dim)
            dx[i] = eps
            g2 += ((self.psi(X + dx) - self.psi(X - dx)) / (2 * eps)) ** 2
        return float(np.sqrt(g2.max()))

    def check(self, n_samples: int = 10_000, seed: int = 0) -> list[str]:
        """Sampled invariant checks; returns a list of violation messages."""
        rng = np.random.default_rng(seed)
        lo, hi = map(np.asarray, self.bounding_box)
        span = hi - lo
        X = lo - span + 3 * span * rng.random((n_samples, self.dim))
        problems = []
        inside = self.psi(X) > 0
        outside_box = np.any((X < lo) | (X > hi), axis=1)
        if np.any(inside & outside_box):
            problems.append("psi > 0 outside bounding box")
        if self.exact_distance is not None:
            d = self.exact_distance(X)
            if np.any(d[~inside] != 0):
                problems.append("exact_distance nonzero where psi <= 0")
            if np.any(d[inside] <= 0):
                problems.append("exact_distance not positive where psi > 0")
        return problems


def disk(radius: float = 1.0, center=(0.0, 0.0)) -> Domain:
    return ball(len(center), radius, center, name="disk")


def ball(dim: int = 2, radius: float = 1.0, center=None, name: str = "ball") -> Domain:
    c = np.zeros(dim) if center is None else np.asarray(center, dtype=float)
    r = float(radius)

    def psi(X):
        return (r**2 - ((X - c) ** 2).sum(axis=1)) / r

    def dist(X):
        return np.maximum(0.0, r - np.sqrt(((X - c) ** 2).sum(axis=1)))

    box = (tuple(c - r), tuple(c + r))
    return Domain(name, psi, box, dist, {"radius": r, "center": c.tolist()})


def ellipse(a: float = 1.0, b: float = 0.6) -> Domain:
    def psi(X):
        return 1.0 - (X[:, 0] / a) ** 2 - (X[:, 1] / b) ** 2

    return Domain("ellipse", psi, ((-a, -b), (a, b)), None, {"a": a, "b": b})


DOMAINS: dict[str, Callable[..., Domain]] = {"disk": disk, "ball": ball, "ellipse": ellipse}


def make_domain(name: str, **params) -> Domain:
    try:
        factory = DOMAINS[name]
    except KeyError:
        raise ValueError(f"unknown domain {name!r}; known: {sorted(DOMAINS)}") from None
    return factory(**params)


def distance_to_complement(domain: Domain, x) -> np.ndarray | float:
    """dist(x, complement of the domain); exact when the domain supplies it,
    otherwise ``max(0, psi) / max|grad psi|``.  Scalar in, scalar out."""
    X = np.asarray(x, dtype=float)
    scalar = X.ndim == 1
    X = np.atleast_2d(X)
    if domain.exact_distance is not None:
        out = domain.exact_distance(X)
    else:
        out = np.maximum(0.0, domain.psi(X)) / max(domain.grad_bound, 1e-300)
    out = np.where(domain.psi(X) > 0, out, 0.0)
    return float(out[0]) if scalar else out


@dataclass(frozen=True, eq=False)
class Grid:
    """Classified lattice.  ``nodes`` lists the value-bearing nodes (Interior
    and BoundaryBand) in lexicographic index order."""

    domain: Domain
    h: float
    directions: DirectionSet
    lo: np.ndarray  # integer index of the first box node per axis
    node_class: np.ndarray  # dense tag array over the index box
    nodes: np.ndarray  # (n, d) integer indices of valued nodes
    is_interior: np.ndarray  # (n,) bool
    position: np.ndarray  # dense array over the box: row in ``nodes`` or -1

    @property
    def dim(self) -> int:
        return self.nodes.shape[1]

    @property
    def stencil_reach(self) -> int:
        return self.directions.reach

    @property
    def index_box(self) -> list[tuple[int, int]]:
        return [(int(l), int(l) + n - 1) for l, n in zip(self.lo, self.node_class.shape)]

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def n_interior(self) -> int:
        return int(self.is_interior.sum())

    @cached_property
    def interior(self) -> np.ndarray:
        """Positions (rows of ``nodes``) of interior nodes, lexicographic."""
        return np.flatnonzero(self.is_interior)

    @cached_property
    def band(self) -> np.ndarray:
        return np.flatnonzero(~self.is_interior)

    @cached_property
    def points(self) -> np.ndarray:
        return self.h * self.nodes.astype(float)

    def locate(self, idx) -> np.ndarray:
        """Rows for integer index vectors; -1 where the node is outside the box or Unused."""
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        rel = idx - self.lo
        shape = np.asarray(self.node_class.shape)
        ok = np.all((rel >= 0) & (rel < shape), axis=1)
        out = np.full(len(idx), -1, dtype=np.int64)
        if ok.any():
            out[ok] = self.position[tuple(rel[ok].T)]
        return out

    @cached_property
    def neighbors(self) -> tuple[np.ndarray, np.ndarray]:
        """(plus, minus) neighbour rows for each interior node and unsigned direction."""
        base = self.nodes[self.interior]
        E = self.directions.unsigned
        plus = np.stack([self.locate(base + e) for e in E], axis=1)
        minus = np.stack([self.locate(base - e) for e in E], axis=1)
        if (plus < 0).any() or (minus < 0).any():
            raise AssertionError("interior node with an unused stencil neighbour")
        return plus, minus

    def classify(self, idx) -> np.ndarray:
        idx = np.atleast_2d(np.asarray(idx, dtype=np.int64))
        rel = idx - self.lo
        shape = np.asarray(self.node_class.shape)
        ok = np.all((rel >= 0) & (rel < shape), axis=1)
        out = np.full(len(idx), UNUSED, dtype=np.int8)
        out[ok] = self.node_class[tuple(rel[ok].T)]
        return out


def _index_box(domain: Domain, h: float, pad: int) -> tuple[np.ndarray, np.ndarray]:
    lo, hi = map(np.asarray, domain.bounding_box)
    ilo = np.floor(lo / h).astype(np.int64) - pad
    ihi = np.ceil(hi / h).astype(np.int64) + pad
    return ilo, ihi


def _box_points(ilo, ihi, h):
    axes = [np.arange(a, b + 1) for a, b in zip(ilo, ihi)]
    mesh = np.meshgrid(*axes, indexing="ij")
    idx = np.stack([m.ravel() for m in mesh], axis=1)
    return idx, tuple(len(a) for a in axes)


def _shift(mask: np.ndarray, offset) -> np.ndarray:
    """out[i] = mask[i + offset], False where i + offset leaves the array."""
    out = np.zeros_like(mask)
    src, dst = [], []
    for o, n in zip(offset, mask.shape):
        o = int(o)
        if abs(o) >= n:
            return out
        if o >= 0:
            src.append(slice(o, n))
            dst.append(slice(0, n - o))
        else:
            src.append(slice(0, n + o))
            dst.append(slice(-o, n))
    out[tuple(dst)] = mask[tuple(src)]
    return out


def _erode(pos: np.ndarray, directions: DirectionSet) -> np.ndarray:
    out = pos.copy()
    for e in directions.unsigned:
        out &= _shift(pos, e) & _shift(pos, -e)
    return out


def build_grid(domain: Domain, h: float, directions: DirectionSet) -> Grid:
    if not h > 0:
        raise ValueError("h must be positive")
    if directions.dim != domain.dim:
        raise ValueError("direction set and domain dimensions differ")
    if not np.all(np.isfinite(np.asarray(domain.bounding_box, dtype=float))):
        raise ValueError("bounding box must be finite")
    s = directions.reach
    ilo, ihi = _index_box(domain, h, s)
    idx, shape = _box_points(ilo, ihi, h)
    pos = (domain.psi(h * idx.astype(float)) > 0).reshape(shape)
    interior = _erode(pos, directions)
    if not interior.any():
        raise EmptyInteriorError(
            f"no interior nodes for domain {domain.name!r} at h={h:g}; refine the step")
    band = np.zeros_like(interior)
    for e in directions.unsigned:
        band |= _shift(interior, e) | _shift(interior, -e)
    band &= ~interior
    node_class = np.zeros(shape, dtype=np.int8)
    node_class[interior] = INTERIOR
    node_class[band] = BAND
    valued = node_class.ravel() != UNUSED  # ravel of C-order box == lexicographic
    nodes = idx[valued]
    position = np.full(len(idx), -1, dtype=np.int64)
    position[valued] = np.arange(len(nodes))
    node_class.setflags(write=False)
    return Grid(domain, float(h), directions, ilo, node_class, nodes,
                node_class.ravel()[valued] == INTERIOR, position.reshape(shape))


def classify_deep_interior(grid: Grid, depth: int) -> np.ndarray:
    """Mask over ``grid.nodes`` of nodes whose every chain of at most ``depth``
    stencil steps stays where psi > 0.  ``depth=1`` is the interior set."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    pad = depth * grid.stencil_reach
    ilo = grid.lo - pad
    ihi = grid.lo + np.asarray(grid.node_class.shape) - 1 + pad
    idx, shape = _box_points(ilo, ihi, grid.h)
    mask = (grid.domain.psi(grid.h * idx.astype(float)) > 0).reshape(shape)
    for _ in range(depth):
        mask = _erode(mask, grid.directions)
    rel = grid.nodes - ilo
    return mask[tuple(rel.T)]

