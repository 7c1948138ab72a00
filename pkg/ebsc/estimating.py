"""Approximate estimating equations for lambda, q and the spectral density.

All equations work on the basis coefficients B = Phi_q' y and the products
lambda * n * eta_{q,i}; coordinates in the penalty null space contribute
nothing to any sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Dict, List, Mapping, NamedTuple, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
import scipy.linalg
import scipy.optimize
from numpy.typing import ArrayLike

from ebsc.config import LambdaGrid
from ebsc.dr_basis import DRBasis, coefficients, default_eta
from ebsc.exceptions import DataValidationError, NotPositiveDefiniteError
from ebsc.noise_model import DEFAULT_DELTA, SpectralModel
from ebsc.smoother import SpectralLike, penalty_weights, spectral_values

logger = logging.getLogger(__name__)

BISECTION_LOG_TOL = 1e-6
EXACT_EQUATION_MAX_N = 512


@dataclass(frozen=True)
class ScorePoint:
    lam: float
    q: int
    rho: SpectralModel
    t_lambda: float
    t_q: float
    sigma2hat: float


class RootResult(NamedTuple):
    value: float
    score: float
    bracketed: bool


class OrderChoice(NamedTuple):
    q_hat: int
    scores: Dict[int, float]
    flags: List[str]


def scaling_factor(lam: float, q: int, n: int) -> float:
    return lam ** (-1.0 / (2 * q)) + n * lam ** (1.0 / (2 * q))


def _eta_for(q: int, coefs: np.ndarray, eta: Optional[np.ndarray]) -> np.ndarray:
    return default_eta(coefs.size, q) if eta is None else np.asarray(eta, dtype=float)


def _score_sums(lam: float, rho: SpectralLike, coefs: np.ndarray, eta: np.ndarray):
    n = eta.size
    tail = eta > 0
    penalty = penalty_weights(lam, eta)[tail]
    weights = 1.0 / (1.0 + penalty * spectral_values(rho)[tail])
    squared = coefs[tail] ** 2
    sigma2hat = (np.sum(squared * penalty * weights) + 1.0) / (n + 1)
    return tail, penalty, weights, squared, sigma2hat


def t_lambda(
    lam: float,
    q: int,
    rho: SpectralLike,
    B: ArrayLike,
    eta: Optional[np.ndarray] = None,
) -> float:
    coefs = np.asarray(B, dtype=float)
    eta = _eta_for(q, coefs, eta)
    _, penalty, weights, squared, sigma2hat = _score_sums(lam, rho, coefs, eta)
    bias = np.sum(squared * penalty * weights**2)
    trace = np.sum(weights)
    return float((bias - sigma2hat * trace) / scaling_factor(lam, q, eta.size))


def t_q(
    lam: float,
    q: int,
    rho: SpectralLike,
    B: ArrayLike,
    eta: Optional[np.ndarray] = None,
) -> float:
    coefs = np.asarray(B, dtype=float)
    eta = _eta_for(q, coefs, eta)
    n = eta.size
    tail, penalty, weights, squared, sigma2hat = _score_sums(lam, rho, coefs, eta)
    log_eigen = np.log(n * eta[tail])
    bias = np.sum(squared * penalty * log_eigen * weights**2)
    trace = np.sum(log_eigen * weights)
    scale = scaling_factor(lam, q, n) * max(np.log(lam) ** 2, np.finfo(float).tiny)
    return float((bias - sigma2hat * trace) / scale)


def score_point(
    lam: float, q: int, rho: SpectralModel, B: ArrayLike, eta: Optional[np.ndarray] = None
) -> ScorePoint:
    coefs = np.asarray(B, dtype=float)
    eta = _eta_for(q, coefs, eta)
    return ScorePoint(
        lam=lam,
        q=q,
        rho=rho,
        t_lambda=t_lambda(lam, q, rho, coefs, eta),
        t_q=t_q(lam, q, rho, coefs, eta),
        sigma2hat=float(_score_sums(lam, rho, coefs, eta)[-1]),
    )


def solve_lambda(
    q: int,
    rho: SpectralLike,
    B: ArrayLike,
    grid: Sequence[float],
    eta: Optional[np.ndarray] = None,
) -> RootResult:
    """Root of t_lambda bracketed by the first sign change on the grid.

    Without a sign change the grid point with the smallest |t_lambda| is
    returned and ``bracketed`` is False.
    """
    coefs = np.asarray(B, dtype=float)
    eta = _eta_for(q, coefs, eta)
    grid = np.sort(np.asarray(grid, dtype=float))

    def score(log_lam: float) -> float:
        return t_lambda(float(np.exp(log_lam)), q, rho, coefs, eta)

    log_grid = np.log(grid)
    values = np.array([score(u) for u in log_grid])
    for k in range(values.size):
        if values[k] == 0.0:
            return RootResult(float(grid[k]), 0.0, True)
        if k + 1 < values.size and values[k] * values[k + 1] < 0:
            log_root = scipy.optimize.bisect(
                score, log_grid[k], log_grid[k + 1], xtol=BISECTION_LOG_TOL / 10, maxiter=200
            )
            root = float(np.exp(log_root))
            return RootResult(root, score(log_root), True)

    best = int(np.argmin(np.abs(values)))
    logger.warning(
        f"t_lambda has no sign change on the grid for q={q}; using lambda={grid[best]:.3e}"
    )
    return RootResult(float(grid[best]), float(values[best]), False)


def update_rho(
    lam: float,
    q: int,
    rho_prev: SpectralLike,
    B: ArrayLike,
    eta: Optional[np.ndarray] = None,
) -> np.ndarray:
    """One fixed-point step of the spectral equations; null-space entries are NaN.

    The step maps rho to B^2 lambda n eta rho / (1 + lambda n eta rho), whose
    fixed points are the roots rho = B^2 - 1 / (lambda n eta) of the spectral
    estimating equation. Constant factors are removed by the normalization in
    ``smooth_rho``.
    """
    coefs = np.asarray(B, dtype=float)
    eta = _eta_for(q, coefs, eta)
    penalty = penalty_weights(lam, eta)
    rho = spectral_values(rho_prev) * np.ones_like(coefs)
    raw = coefs**2 * penalty * rho / (1.0 + penalty * rho)
    raw[eta == 0] = np.nan
    return raw


def smooth_rho(
    rho_raw: ArrayLike,
    p: int,
    basis_p: DRBasis,
    delta: float = DEFAULT_DELTA,
    grid: Optional[Sequence[float]] = None,
) -> SpectralModel:
    """Spline-smooths raw spectral values under an iid working correlation."""
    raw = pd.Series(np.asarray(rho_raw, dtype=float))
    n = raw.size
    if raw.isna().sum() > n / 2:
        raise DataValidationError("raw spectral values are missing for more than half the grid")
    filled = raw.bfill().ffill().to_numpy()

    scale = float(np.mean(filled))
    if not scale > 0:
        return SpectralModel.flat(n, delta)
    values = filled / scale

    grid = LambdaGrid().values(n, p) if grid is None else grid
    coefs = coefficients(basis_p, values)
    flat = np.ones(n)
    root = solve_lambda(p, flat, coefs, grid, eta=basis_p.eta)
    weights = 1.0 / (1.0 + penalty_weights(root.value, basis_p.eta))
    logger.debug(f"Spectral smoothing parameter xi={root.value:.3e} (bracketed={root.bracketed})")
    return SpectralModel.from_values(basis_p.phi @ (weights * coefs), delta)


def select_order(scores: Mapping[int, float]) -> Tuple[int, List[str]]:
    """Applies the sign-change rule to the t_q values of consecutive orders."""
    orders = sorted(scores)
    values = [scores[q] for q in orders]
    for k, q in enumerate(orders):
        if values[k] == 0.0:
            return q, []
        if k + 1 < len(orders) and values[k] * values[k + 1] < 0:
            pair = (q, orders[k + 1])
            return min(pair, key=lambda order: (abs(scores[order]), order)), []
    if all(value < 0 for value in values):
        return orders[-1], []
    logger.warning("t_q is positive for every order; selecting the smallest")
    return orders[0], ["q-all-positive"]


def solve_q(
    results: Mapping[int, Tuple[float, SpectralModel, np.ndarray]],
    etas: Optional[Mapping[int, np.ndarray]] = None,
) -> OrderChoice:
    etas = etas or {}
    scores = {
        q: t_q(lam, q, rho, coefs, etas.get(q)) for q, (lam, rho, coefs) in results.items()
    }
    q_hat, flags = select_order(scores)
    return OrderChoice(q_hat=q_hat, scores=scores, flags=flags)


def expected_root(
    q: int,
    signal_coefs: ArrayLike,
    sigma2: float,
    spectral: SpectralModel,
    grid: Sequence[float],
    eta: Optional[np.ndarray] = None,
) -> RootResult:
    """Root of the expected estimating equation under the true correlation.

    t_lambda depends on the data only through B_i^2, whose expectation is the
    squared signal coefficient plus sigma^2 rho_i.
    """
    signal_coefs = np.asarray(signal_coefs, dtype=float)
    expected = np.sqrt(signal_coefs**2 + sigma2 * spectral_values(spectral))
    return solve_lambda(q, spectral, expected, grid, eta)


def t_lambda_exact(
    lam: float, q: int, R: ArrayLike, y: ArrayLike, basis: DRBasis
) -> float:
    """Dense-matrix estimating equation for lambda (validation only, n <= 512).

    Uses the exact smoother S with working correlation R; its approximate
    counterpart is ``t_lambda``.
    """
    n = basis.n
    if n > EXACT_EQUATION_MAX_N:
        raise DataValidationError(f"exact equations are limited to n <= {EXACT_EQUATION_MAX_N}")
    y = np.asarray(y, dtype=float)
    R = np.asarray(R, dtype=float)
    try:
        factor = scipy.linalg.cho_factor(R, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"working correlation is not positive definite: {e}")
    phi = basis.phi
    penalty = np.diag(penalty_weights(lam, basis.eta))
    gram = phi.T @ scipy.linalg.cho_solve(factor, phi)
    system = 0.5 * (gram + gram.T) + penalty
    # S R = Phi A^-1 Phi'
    inverse_system = scipy.linalg.solve(system, np.eye(n), assume_a="pos")
    smoother_cov = phi @ inverse_system @ phi.T
    smoother = smoother_cov @ scipy.linalg.cho_solve(factor, np.eye(n))
    residual_operator = scipy.linalg.cho_solve(factor, np.eye(n) - smoother)
    residual_operator = 0.5 * (residual_operator + residual_operator.T)
    sigma2hat = (y @ residual_operator @ y + 1.0) / (n + 1)
    derivative = phi @ inverse_system @ penalty @ inverse_system @ phi.T
    whitened = scipy.linalg.cho_solve(factor, y)
    bias = whitened @ derivative @ whitened
    trace = np.trace(smoother) - basis.q
    return float((bias - sigma2hat * trace) / scaling_factor(lam, q, n))
