"""Polynomial value-function models v(y) = sum_k theta_k phi_k(y / l)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .basis import BasisSet
from .evaltree import CompiledModel, compiled_for


@dataclass
class PolynomialModel:
    """Coefficients theta over a basis set, with box half-width l as scale."""

    basis: BasisSet
    theta: np.ndarray
    scale: float

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=float)
        if self.theta.shape != (len(self.basis),):
            raise ValueError(
                f"theta has shape {self.theta.shape}, expected ({len(self.basis)},)"
            )

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.theta)

    def with_theta(self, theta) -> "PolynomialModel":
        return PolynomialModel(self.basis, np.asarray(theta, dtype=float),
                               self.scale)

    def compiled(self) -> CompiledModel:
        return compiled_for(self.basis, self.theta, self.scale)

    def value_grad(self, y):
        return self.compiled().value_grad(self.theta, y)

    def value_grad_hess(self, y):
        return self.compiled().value_grad_hess(self.theta, y)

    def batch(self, Y, want_hess: bool = False):
        return self.compiled().batch(self.theta, Y, want_hess=want_hess)


def zero_model(basis: BasisSet, scale: float) -> PolynomialModel:
    return PolynomialModel(basis, np.zeros(len(basis)), scale)


def eval_model(model: PolynomialModel, y, want_hess: bool = True):
    """(v, grad, hess) of the model at y; hess is None unless requested."""
    if want_hess:
        return model.value_grad_hess(y)
    v, g = model.value_grad(y)
    return v, g, None


def coefficients_from_unscaled(basis: BasisSet, terms: dict, scale: float) -> np.ndarray:
    """Coefficient vector representing sum c_alpha * y^alpha in the scaled basis.

    Each unscaled coefficient c_alpha becomes c_alpha * l^|alpha| on the
    monomial phi_alpha(y / l).
    """
    theta = np.zeros(len(basis))
    for alpha, c in terms.items():
        alpha = tuple(alpha)
        theta[basis.position(alpha)] = c * scale ** sum(alpha)
    return theta
