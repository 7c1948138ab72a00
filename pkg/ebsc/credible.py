from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Any, Dict, Iterator, Optional, Text, Tuple

import numpy as np
import scipy.linalg

from ebsc.dr_basis import build_basis
from ebsc.driver import FitResult
from ebsc.exceptions import DataValidationError, NotPositiveDefiniteError
from ebsc.smoother import penalty_weights

logger = logging.getLogger(__name__)

DEFAULT_NUM_DRAWS = 20_000
DEFAULT_ALPHA = 0.05
DEFAULT_MULTIPLIER = 1.0
MIN_DRAWS = 100
DRAW_BLOCK = 2_000
NEGATIVE_EIGEN_TOL = 1e-8


@dataclass(frozen=True)
class CredibleSet:
    alpha: float
    multiplier: float
    radius: float
    s_n: float
    t: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    retained: int
    num_draws: int
    draws: Optional[np.ndarray] = None

    def to_dict(self) -> Dict[Text, Any]:
        return {
            "alpha": self.alpha,
            "L": self.multiplier,
            "radius": self.radius,
            "s_n": self.s_n,
            "retained": self.retained,
            "num_draws": self.num_draws,
            "bands": [
                {"t": float(t), "lo": float(lo), "hi": float(hi)}
                for t, lo, hi in zip(self.t, self.lower, self.upper)
            ],
        }


def posterior_factor(fit: FitResult) -> np.ndarray:
    """Factor F with F F' equal to the symmetrized posterior scale S R.

    With the dense smoother at the fitted (lambda, q, R) the product S R is
    Phi (Phi' R^-1 Phi + lambda diag(n eta))^-1 Phi', where R is the Toeplitz
    matrix of r_hat truncated at lag 200.
    """
    basis = build_basis(fit.n, fit.q_hat, exact=fit.exact_eta)
    correlation = fit.rho_hat.toeplitz()
    try:
        factor = scipy.linalg.cho_factor(correlation, lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"estimated correlation matrix is not positive definite: {e}")
    phi = basis.phi
    gram = phi.T @ scipy.linalg.cho_solve(factor, phi)
    system = 0.5 * (gram + gram.T) + np.diag(penalty_weights(fit.lambda_hat, basis.eta))
    scale = phi @ scipy.linalg.solve(system, phi.T, assume_a="pos")
    scale = 0.5 * (scale + scale.T)

    eigenvalues, eigenvectors = scipy.linalg.eigh(scale)
    if eigenvalues.min() < -NEGATIVE_EIGEN_TOL:
        raise NotPositiveDefiniteError(
            f"posterior scale matrix has eigenvalue {eigenvalues.min():.3e}"
        )
    return eigenvectors * np.sqrt(np.clip(eigenvalues, 0.0, None))


def _blocks(
    factor: np.ndarray, num_draws: int, seed: Optional[int]
) -> Iterator[Tuple[np.ndarray, np.ndarray]]:
    """Yields (noise, statistic) per block; noise rows are F z sqrt((n+1)/u)."""
    if num_draws < MIN_DRAWS:
        raise DataValidationError(f"need at least {MIN_DRAWS} posterior draws, got {num_draws}")
    n = factor.shape[0]
    sizes = [DRAW_BLOCK] * (num_draws // DRAW_BLOCK)
    if num_draws % DRAW_BLOCK:
        sizes.append(num_draws % DRAW_BLOCK)
    for size, child in zip(sizes, np.random.SeedSequence(seed).spawn(len(sizes))):
        rng = np.random.default_rng(child)
        z = rng.standard_normal((size, n))
        u = rng.chisquare(n + 1, size)
        noise = (z @ factor.T) * np.sqrt((n + 1) / u)[:, None]
        yield noise, np.sum(noise**2, axis=1)


def radius_samples(factor: np.ndarray, num_draws: int, seed: Optional[int]) -> np.ndarray:
    """Draws of (n+1) Z' F F' Z / U."""
    return np.concatenate([stats for _, stats in _blocks(factor, num_draws, seed)])


def _order_statistic(samples: np.ndarray, alpha: float) -> Tuple[float, np.ndarray]:
    if not 0 < alpha < 1:
        raise DataValidationError(f"alpha must lie in (0, 1), got {alpha}")
    retained = math.ceil((1 - alpha) * samples.size)
    order = np.argsort(samples, kind="stable")
    return float(samples[order[retained - 1]]), order[:retained]


def sample_posterior(
    fit: FitResult, num_draws: int = DEFAULT_NUM_DRAWS, seed: Optional[int] = None
) -> np.ndarray:
    factor = posterior_factor(fit)
    sigma = math.sqrt(fit.sigma2hat)
    return np.vstack([fit.fhat + sigma * noise for noise, _ in _blocks(factor, num_draws, seed)])


def radius_quantile(
    fit: FitResult,
    alpha: float = DEFAULT_ALPHA,
    num_draws: int = DEFAULT_NUM_DRAWS,
    seed: Optional[int] = None,
) -> float:
    s_n, _ = _order_statistic(radius_samples(posterior_factor(fit), num_draws, seed), alpha)
    return s_n


def credible_set(
    fit: FitResult,
    alpha: float = DEFAULT_ALPHA,
    L: float = DEFAULT_MULTIPLIER,
    num_draws: int = DEFAULT_NUM_DRAWS,
    seed: Optional[int] = None,
    keep_draws: bool = True,
) -> CredibleSet:
    """Keeps the (1 - alpha) share of posterior draws closest to fhat."""
    if L < 1:
        raise DataValidationError(f"multiplier L must be at least 1, got {L}")
    factor = posterior_factor(fit)
    samples = radius_samples(factor, num_draws, seed)
    s_n, kept_index = _order_statistic(samples, alpha)
    keep = np.zeros(num_draws, dtype=bool)
    keep[kept_index] = True

    sigma = math.sqrt(fit.sigma2hat)
    lower = np.full(fit.n, np.inf)
    upper = np.full(fit.n, -np.inf)
    kept_draws = []
    offset = 0
    for noise, _ in _blocks(factor, num_draws, seed):
        block_keep = keep[offset : offset + noise.shape[0]]
        offset += noise.shape[0]
        draws = fit.fhat + sigma * noise[block_keep]
        if draws.size:
            lower = np.minimum(lower, draws.min(axis=0))
            upper = np.maximum(upper, draws.max(axis=0))
        if keep_draws:
            kept_draws.append(draws)

    radius = L * fit.sigma2hat * s_n
    logger.debug(f"Credible set alpha={alpha} L={L} s_n={s_n:.4f} radius={radius:.4e}")
    return CredibleSet(
        alpha=alpha,
        multiplier=L,
        radius=radius,
        s_n=s_n,
        t=np.linspace(0.0, 1.0, fit.n),
        lower=lower,
        upper=upper,
        retained=int(keep.sum()),
        num_draws=num_draws,
        draws=np.vstack(kept_draws) if keep_draws else None,
    )
