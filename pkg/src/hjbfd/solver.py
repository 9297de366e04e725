"""Discrete Bellman operator and its solvers.

Three methods reach the same fixed point:

* ``jacobi`` -- the damped update ``v <- v + h^2 / N0 * H_h[v]`` on interior
  nodes, a sup-norm contraction with constant ``1 - c_min h^2 / N0``;
* ``gauss_seidel`` -- nonlinear lexicographic sweeps, each node set to the
  value that zeroes its own equation given current neighbours;
* ``policy`` -- Howard's method: freeze the maximising control per node,
  solve the linear monotone system, repeat.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field

import numba
import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .lattice import Grid
from .problem import BellmanProblem

METHODS = ("jacobi", "gauss_seidel", "policy")


class MonotonicityError(RuntimeError):
    """A neighbour weight of the scheme is negative at the requested step."""


class SolverError(RuntimeError):
    """The iteration stopped without meeting the tolerance."""

    def __init__(self, message, solution=None, report=None):
        super().__init__(message)
        self.solution = solution
        self.report = report


class GridFunction:
    """Values on the Interior and BoundaryBand nodes of a grid."""

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (grid.n_nodes,):
            raise ValueError(f"expected {grid.n_nodes} values, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("grid function values must be finite")
        self.grid = grid
        self.values = values

    @classmethod
    def from_field(cls, grid: Grid, fn) -> "GridFunction":
        return cls(grid, np.asarray(fn(grid.points), dtype=float))

    @classmethod
    def zeros(cls, grid: Grid) -> "GridFunction":
        return cls(grid, np.zeros(grid.n_nodes))

    def __getitem__(self, idx) -> float:
        row = self.grid.locate(np.asarray(idx))[0]
        if row < 0:
            raise KeyError(tuple(int(i) for i in np.ravel(idx)))
        return float(self.values[row])

    def copy(self) -> "GridFunction":
        return GridFunction(self.grid, self.values.copy())

    @property
    def interior_values(self) -> np.ndarray:
        return self.values[self.grid.interior]


@dataclass(eq=False)
class SchemeCache:
    """Coefficients per (control, interior node).  Arrays whose second axis has
    length 1 are constant in x."""

    grid: Grid
    A: np.ndarray  # (m, n | 1, K)
    BP: np.ndarray  # (m, n | 1, K)
    BM: np.ndarray  # (m, n | 1, K)
    C: np.ndarray  # (m, n | 1)
    F: np.ndarray  # (m, n | 1)
    g_band: np.ndarray  # boundary data on band rows of grid.nodes
    has_drift: bool

    @property
    def h(self) -> float:
        return self.grid.h

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def c_min(self) -> float:
        return float(self.C.min())

    def control(self, j: int, rows: np.ndarray | None = None):
        """(a, bp, bm, c, f) of control j broadcast to full interior shape."""
        n, K = self.grid.n_interior, self.A.shape[2]
        out = []
        for arr, shape in ((self.A, (n, K)), (self.BP, (n, K)), (self.BM, (n, K)),
                           (self.C, (n,)), (self.F, (n,))):
            full = np.broadcast_to(arr[j], shape)
            out.append(full if rows is None else full[rows])
        return tuple(out)


def _stack(parts, n):
    lead = max(np.asarray(p).shape[0] for p in parts)
    if lead == 1:
        return np.stack([np.asarray(p, dtype=float) for p in parts])
    return np.stack([np.broadcast_to(np.asarray(p, dtype=float), (n,) + np.shape(p)[1:])
                     for p in parts])


def build_cache(p: BellmanProblem, grid: Grid) -> SchemeCache:
    X = grid.points[grid.interior]
    n, K = len(X), p.directions.d1
    if p.directions is not grid.directions and not np.array_equal(
            p.directions.unsigned, grid.directions.unsigned):
        raise ValueError("grid and problem use different direction sets")
    As, BPs, BMs, Cs, Fs = [], [], [], [], []
    drift = False
    for j in range(p.n_controls):
        co = p.coeffs(j, X)
        a = np.atleast_2d(np.asarray(co.a, dtype=float))
        As.append(a)
        for lst, b in ((BPs, co.bp), (BMs, co.bm)):
            if b is None:
                lst.append(np.zeros((1, K)))
            else:
                drift = True
                lst.append(np.atleast_2d(np.asarray(b, dtype=float)))
        Cs.append(np.atleast_1d(np.asarray(co.c, dtype=float)))
        Fs.append(np.atleast_1d(np.asarray(co.f, dtype=float)))
    band_pts = grid.points[grid.band]
    g_band = np.asarray(p.g(band_pts), dtype=float) if len(band_pts) else np.zeros(0)
    cache = SchemeCache(grid, _stack(As, n), _stack(BPs, n), _stack(BMs, n),
                        _stack(Cs, n), _stack(Fs, n), g_band, drift)
    for arr in (cache.A, cache.BP, cache.BM, cache.C, cache.F):
        arr.setflags(write=False)
    return cache


def check_monotone(cache: SchemeCache) -> None:
    """Raise if any neighbour weight ``a_k + h b_{+-k}`` (or ``a_k``) is negative
    or ``c`` is negative."""
    h = cache.h
    if (cache.A < 0).any():
        raise MonotonicityError("negative diffusion coefficient in scheme cache")
    if (cache.C < 0).any():
        raise MonotonicityError("negative zeroth-order coefficient in scheme cache")
    if cache.has_drift:
        if (h * np.abs(cache.BP) > cache.A * (1 + 1e-12) + 1e-15).any() or \
                (h * np.abs(cache.BM) > cache.A * (1 + 1e-12) + 1e-15).any():
            raise MonotonicityError(f"h|b_k| > a_k at h={h:g}; refine the grid")


# -- operator evaluation ------------------------------------------------------------

def _contract(coef: np.ndarray, D: np.ndarray) -> np.ndarray:
    """sum_k coef[j, i, k] * D[i, k] -> (m, n)."""
    if coef.shape[1] == 1:
        return coef[:, 0, :] @ D.T
    return np.einsum("mnk,nk->mn", coef, D)


def control_values(cache: SchemeCache, v: np.ndarray) -> np.ndarray:
    """Bracketed expression of every control at every interior node, shape (m, n)."""
    grid = cache.grid
    h = grid.h
    plus, minus = grid.neighbors
    vi = v[grid.interior]
    vp, vm = v[plus], v[minus]
    D2 = (vp + vm - 2.0 * vi[:, None]) / h**2
    out = _contract(cache.A, D2)
    if cache.has_drift:
        out += _contract(cache.BP, (vp - vi[:, None]) / h)
        out += _contract(cache.BM, (vm - vi[:, None]) / h)
    out -= cache.C * vi
    out += cache.F
    return out


def bellman_operator(cache: SchemeCache, v) -> np.ndarray:
    """``H_h[v]`` on all interior nodes (order of ``grid.interior``)."""
    vals = v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=float)
    return control_values(cache, vals).max(axis=0)


def bellman_apply(cache: SchemeCache, v: GridFunction, node) -> float:
    """``H_h[v]`` at a single interior node given by its integer index."""
    grid = cache.grid
    row = grid.locate(np.asarray(node))[0]
    if row < 0 or not grid.is_interior[row]:
        raise ValueError(f"node {tuple(node)} is not interior")
    i = int(np.searchsorted(grid.interior, row))
    plus, minus = grid.neighbors
    vals = v.values
    h = grid.h
    best = -math.inf
    for j in range(cache.m):
        a, bp, bm, c, f = (x[i] for x in cache.control(j))
        vi = vals[row]
        vp, vm = vals[plus[i]], vals[minus[i]]
        expr = (a * (vp - 2 * vi + vm)).sum() / h**2 + (bp * (vp - vi)).sum() / h \
            + (bm * (vm - vi)).sum() / h - c * vi + f
        best = max(best, float(expr))
    return best


def residual(cache: SchemeCache, v) -> float:
    return float(np.abs(bellman_operator(cache, v)).max())


def compute_damping(cache: SchemeCache) -> tuple[float, float]:
    """``N0 = max (2 sum_k a_k + h sum_k |b_k| + c h^2)`` over cached
    (node, control) pairs, and the contraction bound ``1 - c_min h^2 / N0``."""
    h = cache.h
    s = 2.0 * cache.A.sum(axis=2) + h * (np.abs(cache.BP).sum(axis=2)
                                         + np.abs(cache.BM).sum(axis=2)) + cache.C * h**2
    N0 = float(s.max())
    return N0, contraction_bound(N0, cache.c_min, h)


def contraction_bound(N0: float, c_min: float, h: float) -> float:
    return 1.0 - c_min * h**2 / N0


def initial_guess(cache: SchemeCache, v0=None) -> np.ndarray:
    grid = cache.grid
    v = np.zeros(grid.n_nodes) if v0 is None else np.array(
        v0.values if isinstance(v0, GridFunction) else v0, dtype=float)
    v[grid.band] = cache.g_band
    return v


def jacobi_step(cache: SchemeCache, v, N0: float) -> tuple[np.ndarray, float]:
    """One damped fixed-point update; band nodes are reset to the boundary data."""
    vals = v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=float)
    grid = cache.grid
    nxt = vals.copy()
    nxt[grid.interior] += cache.h**2 / N0 * bellman_operator(cache, vals)
    nxt[grid.band] = cache.g_band
    return nxt, float(np.abs(nxt - vals).max()) if len(vals) else 0.0


# -- Gauss-Seidel kernel -------------------------------------------------------------

@numba.njit(cache=True)
def _gs_sweep(v, interior, plus, minus, A, BP, BM, C, F, h, policy):
    """In-place lexicographic sweep.  Node value = max_j R_j / D_j, the root of
    max_j (R_j - D_j t); ``policy[i] >= 0`` restricts node i to one control."""
    n = interior.shape[0]
    m = A.shape[0]
    K = A.shape[2]
    h2 = h * h
    change = 0.0
    for i in range(n):
        row = interior[i]
        ia = i if A.shape[1] > 1 else 0
        ib = i if BP.shape[1] > 1 else 0
        ic = i if C.shape[1] > 1 else 0
        ifr = i if F.shape[1] > 1 else 0
        j0 = 0
        j1 = m
        if policy[i] >= 0:
            j0 = policy[i]
            j1 = j0 + 1
        best = -np.inf
        for j in range(j0, j1):
            num = F[j, ifr]
            den = C[j, ic]
            for k in range(K):
                wp = A[j, ia, k] / h2 + BP[j, ib, k] / h
                wm = A[j, ia, k] / h2 + BM[j, ib, k] / h
                num += wp * v[plus[i, k]] + wm * v[minus[i, k]]
                den += wp + wm
            t = num / den
            if t > best:
                best = t
        d = abs(best - v[row])
        if d > change:
            change = d
        v[row] = best
    return change


def gauss_seidel_sweep(cache: SchemeCache, v: np.ndarray, policy: np.ndarray | None = None) -> float:
    grid = cache.grid
    plus, minus = grid.neighbors
    pol = np.full(grid.n_interior, -1, dtype=np.int64) if policy is None else \
        np.asarray(policy, dtype=np.int64)
    return _gs_sweep(v, grid.interior, plus, minus, cache.A, cache.BP, cache.BM,
                     cache.C, cache.F, cache.h, pol)


# -- policy iteration -----------------------------------------------------------------

def select_policy(cache: SchemeCache, v: np.ndarray) -> np.ndarray:
    """Maximising control per interior node; ties go to the lowest index."""
    return np.argmax(control_values(cache, v), axis=0)


def linear_system(cache: SchemeCache, policy: np.ndarray) -> tuple[sp.csr_matrix, np.ndarray]:
    """``M u = r`` for interior unknowns with controls frozen to ``policy``.
    M has positive diagonal and nonpositive off-diagonal entries."""
    grid = cache.grid
    h = grid.h
    n = grid.n_interior
    plus, minus = grid.neighbors
    rows = np.arange(n)
    a = np.empty((n, cache.A.shape[2]))
    bp, bm = np.empty_like(a), np.empty_like(a)
    c, f = np.empty(n), np.empty(n)
    for j in np.unique(policy):
        sel = rows[policy == j]
        aj, bpj, bmj, cj, fj = cache.control(int(j), sel)
        a[sel], bp[sel], bm[sel], c[sel], f[sel] = aj, bpj, bmj, cj, fj
    wp = a / h**2 + bp / h
    wm = a / h**2 + bm / h
    diag = wp.sum(axis=1) + wm.sum(axis=1) + c
    int_index = np.full(grid.n_nodes, -1, dtype=np.int64)
    int_index[grid.interior] = rows
    g_full = np.zeros(grid.n_nodes)
    g_full[grid.band] = cache.g_band
    rhs = f.copy()
    r_idx, c_idx, vals = [rows], [rows], [diag]
    for nbr, w in ((plus, wp), (minus, wm)):
        col = int_index[nbr]
        inside = col >= 0
        rr = np.broadcast_to(rows[:, None], nbr.shape)
        r_idx.append(rr[inside])
        c_idx.append(col[inside])
        vals.append(-w[inside])
        rhs += (w * np.where(inside, 0.0, g_full[nbr])).sum(axis=1)
    M = sp.csr_matrix((np.concatenate(vals), (np.concatenate(r_idx), np.concatenate(c_idx))),
                      shape=(n, n))
    return M, rhs


def policy_iteration_step(cache: SchemeCache, v, linear_tol: float = 1e-12,
                          linear_solver: str = "direct", max_sweeps: int = 100_000):
    """Select the maximising policy at ``v`` and solve the frozen linear system.

    Returns ``(v_next, policy, info)``.  With ``linear_solver="gauss_seidel"``
    the system is solved by lexicographic sweeps until the sweep change drops
    below ``linear_tol``; stagnation falls back to a Jacobi step.
    """
    vals = v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=float)
    grid = cache.grid
    policy = select_policy(cache, vals)
    nxt = vals.copy()
    nxt[grid.band] = cache.g_band
    info = {"linear_solver": linear_solver, "fallback": False, "sweeps": 0}
    if linear_solver == "direct":
        M, rhs = linear_system(cache, policy)
        nxt[grid.interior] = spla.spsolve(M.tocsc(), rhs)
    elif linear_solver == "gauss_seidel":
        change = math.inf
        sweeps = 0
        while change > linear_tol and sweeps < max_sweeps:
            change = gauss_seidel_sweep(cache, nxt, policy)
            sweeps += 1
        info["sweeps"] = sweeps
        if change > linear_tol:
            N0, _ = compute_damping(cache)
            nxt, _ = jacobi_step(cache, vals, N0)
            info["fallback"] = True
    else:
        raise ValueError(f"unknown linear solver {linear_solver!r}")
    return nxt, policy, info


# -- driver -------------------------------------------------------------------------

@dataclass
class SolveReport:
    method: str
    h: float
    n_interior: int
    n_controls: int
    iterations: int
    residual: float
    converged: bool
    N0: float
    c_min: float
    contraction_bound: float
    history: list[float] = field(default_factory=list)  # sup |v_{n+1} - v_n|
    residual_history: list[float] = field(default_factory=list)
    wall_time: float = 0.0
    message: str = ""

    def contraction_ratios(self) -> np.ndarray:
        hist = np.asarray(self.history)
        if len(hist) < 2:
            return np.zeros(0)
        prev, cur = hist[:-1], hist[1:]
        ok = prev > 0
        return cur[ok] / prev[ok]

    def to_json(self, include_timing: bool = False) -> dict:
        d = asdict(self)
        if not include_timing:
            d.pop("wall_time")
        return d


def solve(p: BellmanProblem, grid: Grid, method: str = "policy", tol: float = 1e-8,
          max_iter: int = 500_000, *, cache: SchemeCache | None = None, v0=None,
          linear_tol: float = 1e-12, linear_solver: str = "direct",
          raise_on_failure: bool = True) -> tuple[GridFunction, SolveReport]:
    """Solve ``H_h[v] = 0`` on interior nodes with ``v = g`` on the band.

    Stops when the sup-norm residual over interior nodes is at most ``tol``.
    """
    if method not in METHODS:
        raise ValueError(f"unknown method {method!r}; choose from {METHODS}")
    if not tol > 0:
        raise ValueError("tol must be positive")
    t0 = time.perf_counter()
    cache = build_cache(p, grid) if cache is None else cache
    check_monotone(cache)
    N0, bound = compute_damping(cache)
    v = initial_guess(cache, v0)
    report = SolveReport(method, grid.h, grid.n_interior, cache.m, 0, math.inf, False,
                         N0, cache.c_min, bound)
    hist, rhist = report.history, report.residual_history
    it = 0

    if method == "jacobi":
        scale = grid.h**2 / N0
        interior = grid.interior
        while True:
            H = bellman_operator(cache, v)
            res = float(np.abs(H).max())
            rhist.append(res)
            if res <= tol or it >= max_iter:
                break
            step = scale * H
            v[interior] += step
            hist.append(float(np.abs(step).max()))
            it += 1
    elif method == "gauss_seidel":
        while True:
            res = residual(cache, v)
            rhist.append(res)
            if res <= tol or it >= max_iter:
                break
            hist.append(gauss_seidel_sweep(cache, v))
            it += 1
    else:
        prev_policy = None
        stalls = 0
        while True:
            res = residual(cache, v)
            rhist.append(res)
            if res <= tol or it >= max_iter:
                break
            nxt, policy, info = policy_iteration_step(cache, v, linear_tol, linear_solver)
            hist.append(float(np.abs(nxt - v).max()))
            v = nxt
            it += 1
            if prev_policy is not None and np.array_equal(policy, prev_policy) and \
                    linear_solver == "direct":
                # same policy twice: the linear solve is already exact; only
                # round-off separates us from tol
                stalls += 1
                if stalls >= 3:
                    rhist.append(residual(cache, v))
                    res = rhist[-1]
                    report.message = "policy stable; residual limited by round-off"
                    break
            prev_policy = policy

    report.iterations = it
    report.residual = res
    report.converged = res <= tol
    report.wall_time = time.perf_counter() - t0
    sol = GridFunction(grid, v)
    if not report.converged:
        report.message = report.message or f"max_iter={max_iter} reached"
        if raise_on_failure:
            raise SolverError(f"{method} did not reach tol={tol:g}: residual {res:.3e} "
                              f"after {it} iterations", sol, report)
    return sol, report


# -- discrete comparison and a-priori bounds ---------------------------------------------

@dataclass
class InequalityReport:
    lhs: float
    rhs: float
    slack: float
    ok: bool

    def to_json(self) -> dict:
        return asdict(self)


def comparison_check(cache: SchemeCache, v1, v2, delta: float | None = None,
                     atol: float = 1e-12) -> InequalityReport:
    """``sup (v1 - v2)_+ <= delta^{-1} sup_int (H[v2] - H[v1])_+ + sup_band (v1 - v2)_+``."""
    grid = cache.grid
    a = v1.values if isinstance(v1, GridFunction) else np.asarray(v1, dtype=float)
    b = v2.values if isinstance(v2, GridFunction) else np.asarray(v2, dtype=float)
    delta = cache.c_min if delta is None else delta
    diff = a - b
    lhs = float(np.maximum(diff, 0).max())
    gap = float(np.maximum(bellman_operator(cache, b) - bellman_operator(cache, a), 0).max())
    band = float(np.maximum(diff[grid.band], 0).max()) if len(grid.band) else 0.0
    rhs = (gap / delta if delta > 0 else (0.0 if gap == 0 else math.inf)) + band
    return InequalityReport(lhs, rhs, rhs - lhs, lhs <= rhs + atol)


@dataclass
class AprioriReport:
    sup_pos: float
    bound_pos: float
    sup_neg: float
    bound_neg: float
    inflation: float

    @property
    def margin_pos(self) -> float:
        return self.bound_pos - self.sup_pos

    @property
    def margin_neg(self) -> float:
        return self.bound_neg - self.sup_neg

    @property
    def ok(self) -> bool:
        return self.margin_pos >= -self.inflation and self.margin_neg >= -self.inflation

    def to_json(self) -> dict:
        d = asdict(self)
        d.update(margin_pos=self.margin_pos, margin_neg=self.margin_neg, ok=self.ok)
        return d


def apriori_bound_check(cache: SchemeCache, v, tol: float = 1e-8,
                        delta: float | None = None) -> AprioriReport:
    """Sup bounds of the solution from the data: ``sup v_+ <= delta^{-1}
    sup (H[0])_+ + sup_band g_+`` and the mirror bound for ``v_-``."""
    vals = v.values if isinstance(v, GridFunction) else np.asarray(v, dtype=float)
    delta = cache.c_min if delta is None else delta
    H0 = bellman_operator(cache, np.zeros(cache.grid.n_nodes))
    g = cache.g_band
    gpos = float(np.maximum(g, 0).max()) if len(g) else 0.0
    gneg = float(np.maximum(-g, 0).max()) if len(g) else 0.0
    hpos = float(np.maximum(H0, 0).max())
    hneg = float(np.maximum(-H0, 0).max())
    # without a positive discount the bound only survives for vanishing data
    bpos = (hpos / delta if delta > 0 else (0.0 if hpos == 0 else np.inf)) + gpos
    bneg = (hneg / delta if delta > 0 else (0.0 if hneg == 0 else np.inf)) + gneg
    return AprioriReport(float(np.maximum(vals, 0).max()), bpos,
                         float(np.maximum(-vals, 0).max()), bneg, 10.0 * tol)
