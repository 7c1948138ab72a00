from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Union

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike

from ebsc.config import SUPPORTED_ORDERS
from ebsc.dr_basis import DRBasis, coefficients
from ebsc.exceptions import DataValidationError, NotPositiveDefiniteError
from ebsc.noise_model import SpectralModel

logger = logging.getLogger(__name__)

DENSE_MAX_N = 2048

SpectralLike = Union[SpectralModel, np.ndarray]


def spectral_values(rho: SpectralLike) -> np.ndarray:
    return np.asarray(rho.rho if isinstance(rho, SpectralModel) else rho, dtype=float)


@dataclass(frozen=True)
class SmootherSpec:
    lam: float
    q: int
    spectral: SpectralModel

    def __post_init__(self) -> None:
        if not np.isfinite(self.lam) or self.lam < 0:
            raise DataValidationError(f"smoothing parameter must be finite and >= 0, got {self.lam}")
        if self.q not in SUPPORTED_ORDERS:
            raise DataValidationError(f"unsupported penalty order {self.q}")


@dataclass(frozen=True)
class SmoothFit:
    fhat: np.ndarray
    coefs: np.ndarray
    shrink: np.ndarray
    sigma2hat: float
    edf: float


def penalty_weights(lam: float, eta: np.ndarray) -> np.ndarray:
    """The products lambda * n * eta_i."""
    return lam * eta.size * eta


def shrinkage_weights(lam: float, eta: np.ndarray, rho: SpectralLike) -> np.ndarray:
    return 1.0 / (1.0 + penalty_weights(lam, eta) * spectral_values(rho))


def variance_estimate(lam: float, eta: np.ndarray, rho: SpectralLike, coefs: np.ndarray) -> float:
    """Posterior mean of sigma^2 in the diagonal approximation."""
    n = eta.size
    penalty = penalty_weights(lam, eta)
    weights = 1.0 / (1.0 + penalty * spectral_values(rho))
    return float((np.sum(coefs**2 * penalty * weights) + 1.0) / (n + 1))


def _check_inputs(spec: SmootherSpec, y: np.ndarray, basis: DRBasis) -> None:
    if basis.q != spec.q:
        raise DataValidationError(f"basis order {basis.q} differs from smoother order {spec.q}")
    if spec.spectral.n != basis.n or y.shape != (basis.n,):
        raise DataValidationError(
            f"dimension mismatch: y {y.shape}, basis {basis.n}, spectral {spec.spectral.n}"
        )


def apply_fast(spec: SmootherSpec, y: ArrayLike, basis: DRBasis) -> SmoothFit:
    y = np.asarray(y, dtype=float)
    _check_inputs(spec, y, basis)
    coefs = coefficients(basis, y)
    weights = shrinkage_weights(spec.lam, basis.eta, spec.spectral)
    return SmoothFit(
        fhat=basis.phi @ (weights * coefs),
        coefs=coefs,
        shrink=weights,
        sigma2hat=variance_estimate(spec.lam, basis.eta, spec.spectral, coefs),
        edf=float(weights.sum()),
    )


def apply_exact(spec: SmootherSpec, y: ArrayLike, basis: DRBasis, R: ArrayLike) -> SmoothFit:
    """Dense smoother Phi {Phi' R^-1 Phi + lambda diag(n eta)}^-1 Phi' R^-1 y."""
    y = np.asarray(y, dtype=float)
    R = np.asarray(R, dtype=float)
    _check_inputs(spec, y, basis)
    n = basis.n
    if n > DENSE_MAX_N:
        raise DataValidationError(f"dense smoother is limited to n <= {DENSE_MAX_N}, got {n}")
    if R.shape != (n, n) or not np.allclose(R, R.T):
        raise NotPositiveDefiniteError("working correlation must be a symmetric n x n matrix")

    try:
        factor = scipy.linalg.cho_factor(R, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"working correlation is not positive definite: {e}")
    phi = basis.phi
    whitened_phi = scipy.linalg.cho_solve(factor, phi)
    gram = phi.T @ whitened_phi
    gram = 0.5 * (gram + gram.T)
    system = gram + np.diag(penalty_weights(spec.lam, basis.eta))
    try:
        solution = scipy.linalg.solve(system, whitened_phi.T @ y, assume_a="sym")
        hat_coordinates = scipy.linalg.solve(system, gram, assume_a="sym")
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"smoother system solve failed: {e}")

    fhat = phi @ solution
    whitened_y = scipy.linalg.cho_solve(factor, y)
    quadratic = float(whitened_y @ y - whitened_y @ fhat)
    return SmoothFit(
        fhat=fhat,
        coefs=phi.T @ y,
        shrink=np.diag(hat_coordinates).copy(),
        sigma2hat=(quadratic + 1.0) / (n + 1),
        edf=float(np.trace(hat_coordinates)),
    )


def log_marginal(spec: SmootherSpec, y: ArrayLike, basis: DRBasis) -> float:
    """Log marginal likelihood (up to a constant) in the diagonal approximation."""
    if spec.lam <= 0:
        raise DataValidationError("log marginal likelihood needs lambda > 0")
    y = np.asarray(y, dtype=float)
    _check_inputs(spec, y, basis)
    n = basis.n
    coefs = coefficients(basis, y)
    penalty = penalty_weights(spec.lam, basis.eta)
    weights = shrinkage_weights(spec.lam, basis.eta, spec.spectral)
    tail = basis.eta > 0
    quadratic = np.sum(coefs[tail] ** 2 * penalty[tail] * weights[tail])
    log_determinant = np.sum(np.log(penalty[tail] * weights[tail]))
    return float(-(n + 1) / 2 * np.log(quadratic + 1.0) + 0.5 * log_determinant)
