"""Smooth scalar fields with analytic derivatives.

Used as manufactured solutions, source terms and Taylor test functions.  All
callables take an array of points of shape (n, d).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class SmoothField:
    name: str
    value: Callable[[Array], Array]
    hess: Callable[[Array], Array] | None = None
    fourth: Callable[[Array, Array], Array] | None = None

    def __call__(self, X):
        return self.value(np.atleast_2d(np.asarray(X, dtype=float)))

    def d2(self, X, e) -> Array:
        """Second derivative along ``e`` (not normalised)."""
        e = np.asarray(e, dtype=float)
        H = self.hess(np.atleast_2d(X))
        return np.einsum("i,nij,j->n", e, H, e)

    def d4(self, X, e) -> Array:
        if self.fourth is None:
            raise NotImplementedError(f"field {self.name!r} has no fourth derivative")
        return self.fourth(np.atleast_2d(X), np.asarray(e, dtype=float))


def constant(c: float) -> SmoothField:
    return SmoothField(
        f"const({c:g})",
        lambda X: np.full(len(X), float(c)),
        lambda X: np.zeros((len(X), X.shape[1], X.shape[1])),
        lambda X, e: np.zeros(len(X)),
    )


def affine(q, c0: float = 0.0) -> SmoothField:
    q = np.asarray(q, dtype=float)
    return SmoothField(
        "affine",
        lambda X: X @ q + c0,
        lambda X: np.zeros((len(X), X.shape[1], X.shape[1])),
        lambda X, e: np.zeros(len(X)),
    )


def quadratic(Q, q=None, c0: float = 0.0) -> SmoothField:
    """``x^T Q x + q.x + c0``."""
    Q = np.asarray(Q, dtype=float)
    Q = 0.5 * (Q + Q.T)
    q = np.zeros(len(Q)) if q is None else np.asarray(q, dtype=float)
    return SmoothField(
        "quadratic",
        lambda X: np.einsum("ni,ij,nj->n", X, Q, X) + X @ q + c0,
        lambda X: np.broadcast_to(2.0 * Q, (len(X),) + Q.shape).copy(),
        lambda X, e: np.zeros(len(X)),
    )


def quadratic_bowl(dim: int = 2) -> SmoothField:
    """``1 - |x|^2``."""
    f = quadratic(-np.eye(dim), c0=1.0)
    return SmoothField("quadratic-bowl", f.value, f.hess, f.fourth)


def _sine_product_hess(X):
    s = np.sin(np.pi * X)
    c = np.cos(np.pi * X)
    n = len(X)
    H = np.empty((n, 2, 2))
    H[:, 0, 0] = -np.pi**2 * s[:, 0] * s[:, 1]
    H[:, 1, 1] = -np.pi**2 * s[:, 0] * s[:, 1]
    H[:, 0, 1] = H[:, 1, 0] = np.pi**2 * c[:, 0] * c[:, 1]
    return H


def _sine_product_d4(X, e):
    # sin(A + a t) sin(B + b t) = (cos(A - B + (a - b) t) - cos(A + B + (a + b) t)) / 2
    A, B = np.pi * X[:, 0], np.pi * X[:, 1]
    a, b = np.pi * e[0], np.pi * e[1]
    return 0.5 * ((a - b) ** 4 * np.cos(A - B) - (a + b) ** 4 * np.cos(A + B))


sine_product = SmoothField(
    "sine-product",
    lambda X: np.sin(np.pi * X[:, 0]) * np.sin(np.pi * X[:, 1]),
    _sine_product_hess,
    _sine_product_d4,
)


def _exp_sine_hess(X):
    ex = np.exp(X[:, 0])
    s, c = np.sin(X[:, 1]), np.cos(X[:, 1])
    H = np.empty((len(X), 2, 2))
    H[:, 0, 0] = ex * s
    H[:, 1, 1] = -ex * s
    H[:, 0, 1] = H[:, 1, 0] = ex * c
    return H


def _exp_sine_d4(X, e):
    # exp(x1) sin(x2) = Im exp(x1 + i x2); along e the fourth derivative is
    # Im[(e1 + i e2)^4 exp(x1 + i x2)]
    z = (e[0] + 1j * e[1]) ** 4
    return np.imag(z * np.exp(X[:, 0] + 1j * X[:, 1]))


exp_sine = SmoothField(
    "exp-sine",
    lambda X: np.exp(X[:, 0]) * np.sin(X[:, 1]),
    _exp_sine_hess,
    _exp_sine_d4,
)


def _quartic_hess(X):
    H = np.zeros((len(X), X.shape[1], X.shape[1]))
    H[:, 0, 0] = 12.0 * X[:, 0] ** 2
    return H


quartic = SmoothField(
    "quartic",
    lambda X: X[:, 0] ** 4,
    _quartic_hess,
    lambda X, e: np.full(len(X), 24.0 * e[0] ** 4),
)


def _sine1_hess(X):
    H = np.zeros((len(X), X.shape[1], X.shape[1]))
    H[:, 0, 0] = -np.sin(X[:, 0])
    return H


sine1 = SmoothField(
    "sine1",
    lambda X: np.sin(X[:, 0]),
    _sine1_hess,
    lambda X, e: np.sin(X[:, 0]) * e[0] ** 4,
)


def bump(center=(0.0, 0.0), width: float = 0.5, height: float = 1.0) -> SmoothField:
    """Gaussian ``height * exp(-|x - center|^2 / width^2)``."""
    c = np.asarray(center, dtype=float)
    w2 = width**2

    def value(X):
        return height * np.exp(-((X - c) ** 2).sum(axis=1) / w2)

    def hess(X):
        y = X - c
        g = value(X)[:, None, None]
        d = X.shape[1]
        return g * (4.0 * np.einsum("ni,nj->nij", y, y) / w2**2 - 2.0 * np.eye(d) / w2)

    return SmoothField("bump", value, hess)


MANUFACTURED = {
    "sine-product": lambda: sine_product,
    "exp-sine": lambda: exp_sine,
    "quadratic-bowl": lambda: quadratic_bowl(2),
    "zero": lambda: constant(0.0),
}
