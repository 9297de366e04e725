"""Direction sets, directional differences and positive rank-one splitting of
diffusion matrices.

Directions are stored as integer offsets.  Only one vector per signed pair is
kept (the "unsigned" direction, first nonzero coordinate positive); the
negative partner is implied.  Diffusion coefficients follow the same
convention: one weight per unsigned direction, applied to the symmetric
second difference, so that ``sum_k lam[k] * outer(e_k, e_k)`` is the matrix.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog


class InfeasibleDecomposition(ValueError):
    """No nonnegative combination of the direction dyads reproduces the matrix."""


class UnusedNeighbor(LookupError):
    """A difference quotient reached a node that carries no value."""


def _canonical_sign(v: np.ndarray) -> np.ndarray:
    nz = np.flatnonzero(v)
    if nz.size and v[nz[0]] < 0:
        return -v
    return v


@dataclass(frozen=True, eq=False)
class DirectionSet:
    """Signed family of integer stencil offsets.

    ``unsigned`` holds one row per unsigned direction.  The signed family is
    ``{0} + {+e_k} + {-e_k}``.  ``core`` optionally lists the unsigned rows
    (by position) whose signed versions, together with 0, form the core set
    used by the sum-set condition.
    """

    unsigned: np.ndarray
    core: tuple[int, ...] | None = None
    name: str = "custom"

    def __post_init__(self):
        arr = np.atleast_2d(np.asarray(self.unsigned, dtype=np.int64))
        object.__setattr__(self, "unsigned", arr)
        arr.setflags(write=False)
        self.validate()

    @property
    def dim(self) -> int:
        return self.unsigned.shape[1]

    @property
    def d1(self) -> int:
        return self.unsigned.shape[0]

    @property
    def reach(self) -> int:
        return int(np.abs(self.unsigned).max())

    def signed(self) -> np.ndarray:
        """All offsets: index 0 is the zero vector, then +e_1..+e_d1, -e_1..-e_d1."""
        zero = np.zeros((1, self.dim), dtype=np.int64)
        return np.vstack([zero, self.unsigned, -self.unsigned])

    def signed_index(self, k: int) -> np.ndarray:
        """Offset for signed index k in {-d1..d1}; 0 gives the zero vector."""
        if k == 0:
            return np.zeros(self.dim, dtype=np.int64)
        if not 1 <= abs(k) <= self.d1:
            raise IndexError(f"direction index {k} out of range for d1={self.d1}")
        e = self.unsigned[abs(k) - 1]
        return e if k > 0 else -e

    def validate(self) -> None:
        arr = self.unsigned
        if arr.ndim != 2 or arr.shape[0] == 0:
            raise ValueError("direction set needs at least one direction")
        if np.any(np.all(arr == 0, axis=1)):
            raise ValueError("zero vector listed as a direction; it is implied")
        keys = {tuple(_canonical_sign(r)) for r in arr}
        if len(keys) != arr.shape[0]:
            raise ValueError("duplicate direction (up to sign)")
        if np.linalg.matrix_rank(arr.astype(float)) != self.dim:
            raise ValueError("directions do not span R^d")
        if self.core is not None and not self.sumset_condition():
            raise ValueError("core set violates L+L >= Lambda >= {l'+l'': l' != l''}")

    def sumset_condition(self) -> bool:
        """Check ``L + L ⊇ Λ ⊇ {l' + l'' : l', l'' ∈ L, l' ≠ l''}`` on integer vectors."""
        if self.core is None:
            return True
        lam = {tuple(r) for r in self.signed()}
        zero = (0,) * self.dim
        core = {zero}
        for i in self.core:
            e = self.unsigned[i]
            core.add(tuple(e))
            core.add(tuple(-e))
        sums = {tuple(np.add(p, q)) for p in core for q in core}
        distinct = {tuple(np.add(p, q)) for p in core for q in core if p != q}
        return lam <= sums and distinct <= lam

    def to_json(self) -> dict:
        return {
            "name": self.name,
            "dim": self.dim,
            "unsigned": self.unsigned.tolist(),
            "core": None if self.core is None else list(self.core),
        }

    @classmethod
    def from_json(cls, data: dict) -> "DirectionSet":
        core = data.get("core")
        return cls(np.asarray(data["unsigned"]), None if core is None else tuple(core),
                   data.get("name", "custom"))


def canonical_directions(dim: int) -> DirectionSet:
    """Axis vectors plus ``e_i ± e_j`` (i < j), core set = the axes."""
    if dim not in (2, 3):
        raise ValueError(f"canonical direction set only defined for dim 2 or 3, got {dim}")
    eye = np.eye(dim, dtype=np.int64)
    rows = list(eye)
    for i, j in itertools.combinations(range(dim), 2):
        rows.append(eye[i] + eye[j])
        rows.append(eye[i] - eye[j])
    return DirectionSet(np.array(rows), core=tuple(range(dim)), name=f"canonical{dim}d")


def axis_directions(dim: int) -> DirectionSet:
    return DirectionSet(np.eye(dim, dtype=np.int64), name=f"axis{dim}d")


def wide_directions(dim: int, reach: int) -> DirectionSet:
    """All primitive integer vectors with max-norm <= reach, one per sign pair."""
    if reach < 1:
        raise ValueError("reach must be >= 1")
    rows = []
    for v in itertools.product(range(-reach, reach + 1), repeat=dim):
        v = np.array(v, dtype=np.int64)
        if not v.any() or math.gcd(*map(int, np.abs(v))) != 1:
            continue
        if tuple(_canonical_sign(v)) == tuple(v):
            rows.append(v)
    # axes first, then by length, for readable coefficient tables
    rows.sort(key=lambda r: (int(np.count_nonzero(r)), int(np.abs(r).sum()), tuple(-r)))
    return DirectionSet(np.array(rows), name=f"wide{dim}d-r{reach}")


DIRECTION_SETS: dict[str, Callable[[int], DirectionSet]] = {
    "canonical": canonical_directions,
    "axis": axis_directions,
    "wide2": lambda d: wide_directions(d, 2),
    "wide3": lambda d: wide_directions(d, 3),
}


def get_directions(name: str, dim: int) -> DirectionSet:
    try:
        return DIRECTION_SETS[name](dim)
    except KeyError:
        raise ValueError(f"unknown direction set {name!r}; known: {sorted(DIRECTION_SETS)}") from None


# -- difference quotients on node-indexed values -------------------------------

def _lookup(values, node, offset):
    key = tuple(int(a) + int(b) for a, b in zip(node, offset))
    try:
        val = values[key]
    except KeyError:
        raise UnusedNeighbor(f"no value at node {key}") from None
    if val is None:
        raise UnusedNeighbor(f"no value at node {key}")
    return val


def forward_difference(values, node: Sequence[int], e: Sequence[int], h: float) -> float:
    """``(v(x + h e) - v(x)) / h`` for a mapping from integer index tuples to values."""
    e = np.asarray(e, dtype=np.int64)
    return (_lookup(values, node, e) - _lookup(values, node, 0 * e)) / h


def second_difference(values, node: Sequence[int], e: Sequence[int], h: float) -> float:
    """``(v(x + h e) - 2 v(x) + v(x - h e)) / h**2``."""
    e = np.asarray(e, dtype=np.int64)
    return (_lookup(values, node, e) - 2.0 * _lookup(values, node, 0 * e)
            + _lookup(values, node, -e)) / h**2


# -- rank-one decomposition ---------------------------------------------------

def _dyads(directions: DirectionSet) -> np.ndarray:
    """Matrix mapping coefficients to upper-triangle entries of sum lam_k e_k e_k^T."""
    d = directions.dim
    iu = np.triu_indices(d)
    E = directions.unsigned.astype(float)
    return np.stack([np.outer(e, e)[iu] for e in E], axis=1)


def reconstruct(lam: np.ndarray, directions: DirectionSet) -> np.ndarray:
    E = directions.unsigned.astype(float)
    return np.einsum("k,ki,kj->ij", np.asarray(lam, dtype=float), E, E)


def _explicit_2d(a: np.ndarray, floor: float, scale: float = 1.0) -> np.ndarray | None:
    a11, a12, a22 = a[0, 0], a[0, 1], a[1, 1]
    lam = np.array([
        a11 - abs(a12) - 2 * floor,
        a22 - abs(a12) - 2 * floor,
        max(a12, 0.0) + floor,
        max(-a12, 0.0) + floor,
    ])
    # admit round-off in the subtractions, then clip
    if np.all(lam >= floor - 1e-14 * scale):
        return np.maximum(lam, floor)
    return None


def _is_canonical_2d(directions: DirectionSet) -> bool:
    return (directions.dim == 2 and directions.d1 == 4
            and np.array_equal(directions.unsigned, canonical_directions(2).unsigned))


def decompose_matrix(a, directions: DirectionSet, floor: float = 0.0,
                     *, atol: float = 1e-10) -> np.ndarray:
    """Coefficients ``lam >= floor`` with ``sum_k lam[k] e_k e_k^T == a``.

    Uses the closed form on the canonical 2D set when the matrix is diagonally
    dominant enough, otherwise a linear program minimising ``sum(lam)``
    followed by an exact re-solve on the active columns.
    """
    a = np.asarray(a, dtype=float)
    d = directions.dim
    if a.shape != (d, d):
        raise ValueError(f"matrix shape {a.shape} does not match dimension {d}")
    if not np.allclose(a, a.T, rtol=0, atol=1e-12):
        raise ValueError("matrix is not symmetric")
    if floor < 0:
        raise ValueError("floor must be nonnegative")
    a = 0.5 * (a + a.T)

    scale = max(1.0, float(np.abs(a).max()))
    if _is_canonical_2d(directions):
        lam = _explicit_2d(a, floor, scale)
        if lam is not None:
            return _snap(lam, floor, scale)

    M = _dyads(directions)
    rhs = a[np.triu_indices(d)]
    res = linprog(np.ones(directions.d1), A_eq=M, b_eq=rhs,
                  bounds=[(floor, None)] * directions.d1, method="highs")
    if res.status == 2:
        raise InfeasibleDecomposition(
            f"matrix {a.tolist()} is not a nonnegative combination of {directions.name} dyads"
            + (f" with floor {floor}" if floor else ""))
    if res.status != 0:
        raise InfeasibleDecomposition(f"linear program failed: {res.message}")
    lam = np.maximum(res.x, floor)

    # polish: re-solve the equality system on the active set for exact reconstruction
    active = lam > floor + 1e-9
    shifted = rhs - M @ np.full(directions.d1, floor)
    if active.any():
        sol, *_ = np.linalg.lstsq(M[:, active], shifted, rcond=None)
        cand = np.full(directions.d1, floor)
        cand[active] = sol + floor
        if np.all(cand >= floor - 1e-12):
            lam = np.maximum(cand, floor)
    err = np.abs(reconstruct(lam, directions) - a).max()
    if err > atol * scale:
        raise InfeasibleDecomposition(f"reconstruction error {err:.3e} exceeds {atol:g}")
    return _snap(lam, floor, scale)


def _snap(lam: np.ndarray, floor: float, scale: float) -> np.ndarray:
    # round-off above the floor would otherwise count as a (tiny) used direction
    lam = lam.copy()
    lam[np.abs(lam - floor) <= 1e-14 * scale] = floor
    return lam


# -- Taylor consistency --------------------------------------------------------

@dataclass(frozen=True)
class TaylorCheck:
    measured_gap: float
    certified_bound: float
    roundoff: float = 0.0  # floating-point error allowance of the difference quotient

    @property
    def ok(self) -> bool:
        return self.measured_gap <= self.certified_bound + self.roundoff


def taylor_consistency(phi, x, e, h: float, n_sup: int = 401) -> TaylorCheck:
    """Compare the second difference of ``phi`` along ``e`` with its exact second
    derivative, against the bound ``h**2 * sup_{|t|<=1} |D^4_e phi(x + t h e)|``.

    ``phi`` must provide ``value``, ``d2(x, e)`` and ``d4(x, e)`` accepting
    arrays of points of shape (n, d).
    """
    x = np.asarray(x, dtype=float)
    e = np.asarray(e, dtype=float)
    pts = np.stack([x + h * e, x, x - h * e])
    v = phi.value(pts)
    delta2 = (v[0] - 2.0 * v[1] + v[2]) / h**2
    exact = float(np.asarray(phi.d2(x[None, :], e))[0])
    t = np.linspace(-1.0, 1.0, n_sup)
    d4 = np.abs(np.asarray(phi.d4(x[None, :] + (t * h)[:, None] * e[None, :], e)))
    # Floating-point allowance: each value carries error ~eps times the size of
    # phi plus the effect of rounding the evaluation points (x + h e is inexact),
    # which scales with |grad phi| |y|.  The latter also covers cancellation
    # between the terms of phi when phi itself is small.
    step = 1e-6 * max(1.0, float(np.abs(x).max()))
    probe = np.concatenate([x + step * np.eye(len(x)), x - step * np.eye(len(x))])
    pv = phi.value(probe)
    grad = np.abs(pv[: len(x)] - pv[len(x):]) / (2 * step)
    size = float(np.abs(v).max()) + float(grad @ (np.abs(x) + h * np.abs(e)))
    roundoff = 8.0 * np.finfo(float).eps * (size / h**2 + abs(exact))
    return TaylorCheck(abs(delta2 - exact), h**2 * float(d4.max()), roundoff)
