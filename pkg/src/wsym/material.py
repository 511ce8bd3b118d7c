"""Isotropic compliance operator (inverse of the elasticity tensor), n = 2."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

DIM = 2


@dataclass(frozen=True)
class MaterialParams:
    mu_s: float = 1.0
    lambda_s: float = 1.0
    rho_s: float = 1.0

    def __post_init__(self):
        for name in ("mu_s", "lambda_s", "rho_s"):
            v = getattr(self, name)
            if not math.isfinite(v):
                raise ValueError(f"{name} must be finite")
            if v <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def deviator_coeff(self) -> float:
        return 1.0 / (2.0 * self.mu_s)

    @property
    def trace_coeff(self) -> float:
        return 1.0 / (DIM * (DIM * self.lambda_s + 2.0 * self.mu_s))

    def compliance_matrix(self) -> np.ndarray:
        """4x4 matrix acting on row-major flattened 2x2 tensors."""
        eye = np.eye(2).ravel()
        a_dev, a_tr = self.deviator_coeff, self.trace_coeff
        return a_dev * np.eye(4) + (a_tr - a_dev / DIM) * np.outer(eye, eye)

    def stiffness_apply(self, eps: np.ndarray) -> np.ndarray:
        """Inverse of the compliance: 2 mu eps + lambda tr(eps) I."""
        tr = np.trace(eps, axis1=-2, axis2=-1)
        return 2.0 * self.mu_s * eps + self.lambda_s * tr[..., None, None] * np.eye(2)


def compliance_apply(tau: np.ndarray, params: MaterialParams) -> np.ndarray:
    """A tau = tau^D / (2 mu) + tr(tau) I / (n (n lambda + 2 mu)); batched over leading axes."""
    tau = np.asarray(tau, dtype=float)
    tr = np.trace(tau, axis1=-2, axis2=-1)[..., None, None]
    dev = tau - tr / DIM * np.eye(2)
    return params.deviator_coeff * dev + params.trace_coeff * tr * np.eye(2)


def compliance_energy(sigma: np.ndarray, tau: np.ndarray, weights: np.ndarray, params: MaterialParams) -> float:
    """Quadrature value of the integral of A sigma : tau.

    ``sigma`` and ``tau`` are tensor values (nq, 2, 2) at the points of a rule
    whose physical weights are ``weights`` (nq,).
    """
    sigma = np.asarray(sigma)
    tau = np.asarray(tau)
    if sigma.shape != tau.shape or sigma.shape[0] != len(weights):
        raise ValueError("sigma, tau and quadrature weights do not match")
    return float(np.einsum("q,qij,qij->", weights, compliance_apply(sigma, params), tau))
