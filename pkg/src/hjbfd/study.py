"""Convergence-rate studies and discrete estimate monitors."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .lattice import Grid, build_grid, classify_deep_interior, distance_to_complement
from .problem import BellmanProblem
from .solver import GridFunction, SolveReport, SolverError, solve


class RateFitError(ValueError):
    pass


class NestingError(ValueError):
    """Grids whose steps are not integer multiples, or a node with no fine counterpart."""


class StudyError(RuntimeError):
    def __init__(self, message, partial=None):
        super().__init__(message)
        self.partial = partial


@dataclass
class RateFit:
    rate: float
    intercept: float
    residual: float
    n_used: int
    notes: list[str] = field(default_factory=list)


def fit_rate(pairs: Sequence[tuple[float, float]]) -> RateFit:
    """Least squares of log(error) on log(h).  Returns slope, intercept (log N)
    and the largest absolute regression residual.  Nonpositive errors are
    dropped with a note."""
    notes = []
    hs, es = [], []
    for h, e in pairs:
        if not e > 0:
            notes.append(f"dropped h={h:g}: error {e!r} not positive")
            continue
        hs.append(math.log(h))
        es.append(math.log(e))
    if len(hs) < 2:
        raise RateFitError("need at least two positive errors to fit a rate")
    x, y = np.asarray(hs), np.asarray(es)
    X = np.column_stack([x, np.ones_like(x)])
    (slope, icpt), *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = float(np.abs(y - X @ np.array([slope, icpt])).max())
    return RateFit(float(slope), float(icpt), resid, len(hs), notes)


def step_ratio(coarse_h: float, fine_h: float) -> int:
    r = coarse_h / fine_h
    m = int(round(r))
    if m < 1 or abs(r - m) > 1e-9 * r:
        raise NestingError(f"step {coarse_h:g} is not an integer multiple of {fine_h:g}")
    return m


def restrict_to_coarse(fine: GridFunction, coarse: Grid,
                       fill: Callable[[np.ndarray], np.ndarray] | None = None) -> GridFunction:
    """Copy fine values at coinciding nodes onto ``coarse``; no interpolation.

    Coarse band nodes that the fine grid does not carry are filled from
    ``fill`` (usually the boundary data) when given; otherwise, as for any
    missing interior node, :class:`NestingError` is raised.
    """
    m = step_ratio(coarse.h, fine.grid.h)
    rows = fine.grid.locate(coarse.nodes * m)
    missing = rows < 0
    if missing.any():
        if fill is None or (missing & coarse.is_interior).any():
            bad = coarse.nodes[missing][0]
            raise NestingError(f"coarse node {tuple(int(i) for i in bad)} has no fine counterpart")
    vals = np.empty(coarse.n_nodes)
    vals[~missing] = fine.values[rows[~missing]]
    if missing.any():
        vals[missing] = fill(coarse.points[missing])
    return GridFunction(coarse, vals)


# -- monitors ----------------------------------------------------------------------

@dataclass
class MonitorRecord:
    h: float
    M1: float  # max |v - g| / rho on interior nodes
    M2: float  # max |forward difference|
    M3: float  # max (rho - 6 h s)_+ |mixed second difference| on deep nodes
    M4: float  # max |v(x) - v(y)| / (|x - y| + h) over sampled pairs

    def as_tuple(self) -> tuple[float, float, float, float]:
        return self.M1, self.M2, self.M3, self.M4


def estimate_monitor(p: BellmanProblem, grid: Grid, v: GridFunction,
                     g: Callable | None = None, *, depth: int = 3,
                     n_pairs: int = 1000, seed: int = 0) -> MonitorRecord:
    g = p.g if g is None else g
    h, s = grid.h, grid.stencil_reach
    vals = v.values
    pts = grid.points
    interior = grid.interior
    rho = np.asarray(distance_to_complement(grid.domain, pts))

    ri = rho[interior]
    dev = np.abs(vals[interior] - g(pts[interior]))
    pos = ri > 0
    M1 = float((dev[pos] / ri[pos]).max()) if pos.any() else 0.0

    plus, minus = grid.neighbors
    vi = vals[interior][:, None]
    M2 = float(max(np.abs(vals[plus] - vi).max(), np.abs(vals[minus] - vi).max()) / h)

    deep = np.flatnonzero(classify_deep_interior(grid, depth))
    M3 = 0.0
    if deep.size:
        weight = np.maximum(rho[deep] - 6.0 * h * s, 0.0)
        base = grid.nodes[deep]
        signed = np.vstack([grid.directions.unsigned, -grid.directions.unsigned])
        v0 = vals[deep]
        step = [vals[grid.locate(base + e)] for e in signed]
        for i, ei in enumerate(signed):
            for j in range(i, len(signed)):
                rows = grid.locate(base + ei + signed[j])
                mixed = (vals[rows] - step[i] - step[j] + v0) / h**2
                M3 = max(M3, float((weight * np.abs(mixed)).max()))

    rng = np.random.default_rng(seed)
    a = rng.integers(0, grid.n_nodes, n_pairs)
    b = rng.integers(0, grid.n_nodes, n_pairs)
    dist = np.linalg.norm(pts[a] - pts[b], axis=1)
    M4 = float((np.abs(vals[a] - vals[b]) / (dist + h)).max())
    return MonitorRecord(h, M1, M2, M3, M4)


def monitor_spread(records: Sequence[MonitorRecord]) -> dict[str, float]:
    """Largest ratio of each monitor to the median over the sweep (both
    directions): a value <= 2 means every entry lies within a factor 2 of the
    median."""
    out = {}
    for name in ("M1", "M2", "M3", "M4"):
        vals = np.array([getattr(r, name) for r in records])
        med = float(np.median(vals))
        if med <= 0:
            out[name] = 1.0 if np.all(vals == 0) else math.inf
            continue
        with np.errstate(divide="ignore"):
            out[name] = float(max((vals / med).max(), (med / vals).max()))
    return out


# -- study ------------------------------------------------------------------------

@dataclass
class StudyReport:
    problem: str
    params: dict
    method: str
    tol: float
    reference_kind: str
    reference_h: float | None
    h: list[float]
    errors: list[float]
    rate: float | None
    intercept: float | None
    fit_residual: float | None
    rate_notes: list[str]
    monitors: list[MonitorRecord]
    solves: list[SolveReport]
    monitor_spread: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[float, float, float, float, float, float]]:
        return [(h, e) + m.as_tuple() for h, e, m in zip(self.h, self.errors, self.monitors)]

    def to_json(self, include_timing: bool = False) -> dict:
        return {
            "problem": self.problem,
            "params": self.params,
            "method": self.method,
            "tol": self.tol,
            "reference_kind": self.reference_kind,
            "reference_h": self.reference_h,
            "h": self.h,
            "errors": self.errors,
            "rate": self.rate,
            "intercept": self.intercept,
            "fit_residual": self.fit_residual,
            "rate_notes": self.rate_notes,
            "monitors": [asdict(m) for m in self.monitors],
            "monitor_spread": self.monitor_spread,
            "solves": [s.to_json(include_timing) for s in self.solves],
        }


def _check_h_list(h_list: Sequence[float]) -> list[float]:
    hs = [float(h) for h in h_list]
    if not hs:
        raise ValueError("empty h list")
    if any(not h > 0 for h in hs):
        raise ValueError("h values must be positive")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ValueError(f"h list must be strictly decreasing: {hs}")
    return hs


def run_convergence_study(p: BellmanProblem, h_list: Sequence[float],
                          reference: str | GridFunction = "auto", *,
                          method: str = "policy", tol: float = 1e-8,
                          max_iter: int = 500_000, ref_factor: int = 2,
                          threads: int = 1, monitor_pairs: int = 1000,
                          seed: int = 0) -> StudyReport:
    """Solve at each step and measure the sup error over coarse interior nodes.

    ``reference`` is ``"exact"`` (the problem's registered solution),
    ``"fine-grid"`` (a solve at ``min(h_list) / ref_factor``), ``"auto"``
    (exact when available) or a precomputed fine :class:`GridFunction`.
    """
    hs = _check_h_list(h_list)
    if isinstance(reference, GridFunction):
        kind, ref_sol = "given", reference
        for h in hs:
            step_ratio(h, ref_sol.grid.h)
    else:
        kind = reference
        if kind == "auto":
            kind = "exact" if p.exact is not None else "fine-grid"
        if kind not in ("exact", "fine-grid"):
            raise ValueError(f"unknown reference {reference!r}")
        if kind == "exact" and p.exact is None:
            raise ValueError(f"problem {p.name!r} has no exact solution")
        ref_sol = None

    def run(h):
        grid = build_grid(p.domain, h, p.directions)
        return solve(p, grid, method, tol, max_iter)

    ref_h = None
    with ThreadPoolExecutor(max_workers=max(1, threads)) as pool:
        futures = [pool.submit(run, h) for h in hs]
        if kind == "fine-grid":
            ref_h = hs[-1] / ref_factor
            ref_future = pool.submit(run, ref_h)
        results, errors_seen = [], []
        for h, fut in zip(hs, futures):
            try:
                results.append((h,) + fut.result())
            except SolverError as exc:
                errors_seen.append((h, exc))
        if kind == "fine-grid":
            ref_sol = ref_future.result()[0]
    if kind == "given":
        ref_h = ref_sol.grid.h

    done_h = [h for h, _, _ in results]
    errors, monitors = [], []
    for h, sol, _ in results:
        grid = sol.grid
        if kind == "exact":
            target = p.exact(grid.points[grid.interior])
        else:
            target = restrict_to_coarse(ref_sol, grid, fill=p.g).interior_values
        errors.append(float(np.abs(sol.interior_values - target).max()))
        monitors.append(estimate_monitor(p, grid, sol, n_pairs=monitor_pairs, seed=seed))

    rate = icpt = resid = None
    notes: list[str] = []
    try:
        fit = fit_rate(list(zip(done_h, errors)))
        rate, icpt, resid, notes = fit.rate, fit.intercept, fit.residual, fit.notes
    except RateFitError as exc:
        notes = [f"rate undefined: {exc}"]

    report = StudyReport(p.name, dict(p.params), method, tol, kind, ref_h, done_h, errors,
                         rate, icpt, resid, notes, monitors, [r for _, _, r in results],
                         monitor_spread(monitors) if monitors else {})
    if errors_seen:
        h, exc = errors_seen[0]
        raise StudyError(f"solver failed at h={h:g}: {exc}", report)
    return report
