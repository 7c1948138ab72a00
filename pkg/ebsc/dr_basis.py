"""Demmler-Reinsch basis of the natural spline space on an equidistant grid.

Columns beyond the penalty null space are built from the closed-form
eigenfunctions of the Sobolev space W_q (a shifted cosine plus exponentially
decaying boundary layers) and re-orthonormalized on the grid.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Tuple

import numpy as np
from numpy.typing import ArrayLike

from ebsc.config import SUPPORTED_ORDERS
from ebsc.exceptions import BasisConstructionError, DataValidationError

logger = logging.getLogger(__name__)

EXACT_MODE_MAX_N = 512
BOUNDARY_RESIDUAL_TOL = 1e-8
BASIS_CACHE_SIZE = 32


@dataclass(frozen=True)
class DRBasis:
    """Orthonormal basis ``phi`` with penalty eigenvalues ``eta`` (ascending)."""

    n: int
    q: int
    phi: np.ndarray
    eta: np.ndarray

    @property
    def grid(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.n)

    def coefficients(self, y: ArrayLike) -> np.ndarray:
        return coefficients(self, y)


def sobolev_eigenvalue(beta: int, i: int) -> float:
    if i <= beta:
        return 0.0
    return float((np.pi * (i - (beta + 1) / 2)) ** (2 * beta))


def default_eta(n: int, q: int) -> np.ndarray:
    """Eigenvalues nu_{q,i} / n for i = 1..n."""
    index = np.arange(1, n + 1, dtype=float)
    eta = (np.pi * (index - (q + 1) / 2)) ** (2 * q) / n
    eta[:q] = 0.0
    return eta


def _correction_roots(beta: int) -> np.ndarray:
    roots = []
    for j in range(beta % 2, beta - 1, 2):
        root = np.exp(1j * np.pi * j / (2 * beta))
        roots.append(root)
        if j > 0:
            roots.append(np.conj(root))
    return np.asarray(roots, dtype=complex)


@lru_cache(maxsize=None)
def boundary_coefficients(beta: int) -> Tuple[np.ndarray, np.ndarray]:
    """Roots a_j in S(beta) and the boundary-layer weights r_j.

    The weights make derivatives beta..2*beta-1 vanish at the left end; the
    right end follows by the (-1)^(i+1) reflection.
    """
    if beta < 1:
        raise BasisConstructionError(f"Sobolev order must be positive, got {beta}")
    roots = _correction_roots(beta)
    phase = np.pi * (beta - 1) / 4
    orders = np.arange(beta, 2 * beta)
    rhs = -np.cos(phase + orders * np.pi / 2).astype(complex)
    if roots.size == 0:
        if np.max(np.abs(rhs)) > BOUNDARY_RESIDUAL_TOL:
            raise BasisConstructionError(f"inconsistent boundary conditions for beta={beta}")
        return roots, np.zeros(0, dtype=complex)

    system = (-roots[None, :]) ** orders[:, None]
    weights, _, rank, _ = np.linalg.lstsq(system, rhs, rcond=None)
    residual = np.max(np.abs(system @ weights - rhs))
    if rank < roots.size or residual > BOUNDARY_RESIDUAL_TOL:
        raise BasisConstructionError(
            f"boundary-coefficient solve is singular for beta={beta} "
            f"(rank {rank}, residual {residual:.2e})"
        )
    return roots, weights


def sobolev_eigenfunction_derivative(
    beta: int, i: ArrayLike, x: ArrayLike, order: int = 0
) -> np.ndarray:
    """Derivative of the given order of psi_{beta,i} at x (broadcast over i and x).

    Defined whenever the frequency pi*(i - (beta+1)/2) is positive, which also
    covers the indices (beta+1)/2 < i <= beta used by the simulation signals.
    """
    i = np.asarray(i, dtype=float)
    x = np.asarray(x, dtype=float)
    omega = np.pi * (i - (beta + 1) / 2)
    if np.any(omega <= 0):
        raise BasisConstructionError(
            f"eigenfunction index must exceed {(beta + 1) / 2} for beta={beta}"
        )
    roots, weights = boundary_coefficients(beta)
    phase = np.pi * (beta - 1) / 4

    value = omega**order * np.cos(omega * x + phase + order * np.pi / 2)
    reflection = np.where(np.mod(i, 2) == 1, 1.0, -1.0)
    layer = np.zeros(np.broadcast(omega, x).shape, dtype=complex)
    for root, weight in zip(roots, weights):
        near = (-root * omega) ** order * np.exp(-root * omega * x)
        far = (root * omega) ** order * np.exp(-root * omega * (1.0 - x))
        layer += weight * (near + reflection * far)
    return np.sqrt(2.0) * (value + layer.real)


def sobolev_eigenfunction(beta: int, i: ArrayLike, x: ArrayLike) -> np.ndarray:
    values = sobolev_eigenfunction_derivative(beta, i, x, order=0)
    return values if values.ndim else float(values)


def _check_order(n: int, q: int) -> None:
    if q not in SUPPORTED_ORDERS:
        raise BasisConstructionError(
            f"penalty order q={q} is not supported, use one of {SUPPORTED_ORDERS}"
        )
    if n < 4 * q:
        raise BasisConstructionError(f"need n >= 4q for a stable basis, got n={n}, q={q}")


def difference_operator(n: int, q: int) -> np.ndarray:
    """Scaled q-th difference matrix D; D'D is the penalty for which n * eta tracks nu."""
    _check_order(n, q)
    return np.diff(np.eye(n), n=q, axis=0) * ((n - 1) ** q / np.sqrt(n))


def exact_eta(basis_phi: np.ndarray, q: int) -> np.ndarray:
    """Penalty eigenvalues evaluated on the basis columns (dense mode, n <= 512).

    Uses the Rayleigh quotients |D phi_i|^2 of the discrete difference penalty
    D'D, with D from ``difference_operator``.
    """
    n = basis_phi.shape[0]
    if n > EXACT_MODE_MAX_N:
        raise BasisConstructionError(
            f"exact eigenvalues are limited to n <= {EXACT_MODE_MAX_N}, got n={n}"
        )
    differenced = difference_operator(n, q) @ basis_phi
    eta = np.sum(differenced**2, axis=0)
    eta[:q] = 0.0
    return np.maximum.accumulate(eta)


def _fix_signs(phi: np.ndarray) -> np.ndarray:
    scale = np.max(np.abs(phi), axis=0)
    significant = np.abs(phi) > 1e-12 * scale
    pivot = np.argmax(significant, axis=0)
    signs = np.sign(phi[pivot, np.arange(phi.shape[1])])
    signs[signs == 0] = 1.0
    return phi * signs


@lru_cache(maxsize=BASIS_CACHE_SIZE)
def build_basis(n: int, q: int, exact: bool = False) -> DRBasis:
    _check_order(n, q)
    t = np.linspace(0.0, 1.0, n)

    columns = np.empty((n, n))
    columns[:, :q] = t[:, None] ** np.arange(q)[None, :]
    index = np.arange(q + 1, n + 1)
    columns[:, q:] = sobolev_eigenfunction_derivative(q, index[None, :], t[:, None]) / np.sqrt(n)

    phi, upper = np.linalg.qr(columns)
    diagonal_signs = np.sign(np.diag(upper))
    diagonal_signs[diagonal_signs == 0] = 1.0
    phi = _fix_signs(phi * diagonal_signs)

    eta = exact_eta(phi, q) if exact else default_eta(n, q)
    phi.setflags(write=False)
    eta.setflags(write=False)
    logger.debug(f"Built DR basis n={n} q={q} exact={exact}")
    return DRBasis(n=n, q=q, phi=phi, eta=eta)


def coefficients(basis: DRBasis, y: ArrayLike) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.shape != (basis.n,):
        raise DataValidationError(
            f"observation vector has shape {y.shape}, basis expects ({basis.n},)"
        )
    return basis.phi.T @ y
