"""Recursive estimation of lambda, q and the spectral density, per penalty order."""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Text, Tuple

import numpy as np
import scipy.linalg
import structlog
from numpy.typing import ArrayLike
from statsmodels.tsa.stattools import acf

from ebsc.config import FitConfig
from ebsc.dr_basis import build_basis
from ebsc.estimating import smooth_rho, solve_lambda, solve_q, t_q, update_rho
from ebsc.exceptions import ArtifactError, DataValidationError
from ebsc.noise_model import SpectralModel, autocorr_from_spectral
from ebsc.smoother import SmootherSpec, apply_fast

logger = logging.getLogger(__name__)
structlogger = structlog.get_logger()

MIN_OBSERVATIONS = 30
PSD_CHECK_LAGS = 200
PSD_TOL = 1e-6
NULL_SPACE_ENERGY_TOL = 1e-20

NO_ROOT = "no-root"
NOT_CONVERGED = "not-converged"
NULL_SPACE_FIT = "null-space-fit"
AUTOCORR_NOT_PSD = "autocorr-not-psd"


@dataclass(frozen=True)
class OrderFit:
    q: int
    lam: float
    rho: SpectralModel
    coefs: np.ndarray
    t_q: float
    iterations: int
    converged: bool
    flags: Tuple[Text, ...] = ()


@dataclass(frozen=True)
class OrderSummary:
    lam: float
    t_q: float
    iterations: int
    converged: bool
    flags: Tuple[Text, ...] = ()


@dataclass(frozen=True)
class FitResult:
    y: np.ndarray
    fhat: np.ndarray
    lambda_hat: float
    q_hat: int
    sigma2hat: float
    rho_hat: SpectralModel
    r_hat: np.ndarray
    edf: float
    coefs: np.ndarray
    per_q: Dict[int, OrderSummary]
    flags: Tuple[Text, ...] = ()
    exact_eta: bool = False

    @property
    def n(self) -> int:
        return self.fhat.size

    def to_dict(self) -> Dict[Text, Any]:
        return {
            "n": self.n,
            "q_hat": self.q_hat,
            "lambda_hat": self.lambda_hat,
            "sigma2hat": self.sigma2hat,
            "edf": self.edf,
            "delta": self.rho_hat.delta,
            "exact_eta": self.exact_eta,
            "flags": list(self.flags),
            "per_q": {
                str(q): {
                    "lambda": summary.lam,
                    "t_q": summary.t_q,
                    "iterations": summary.iterations,
                    "converged": summary.converged,
                    "flags": list(summary.flags),
                }
                for q, summary in self.per_q.items()
            },
            "y": self.y.tolist(),
            "fhat": self.fhat.tolist(),
            "rho_hat": self.rho_hat.rho.tolist(),
            "r_hat": self.r_hat.tolist(),
            "coefs": self.coefs.tolist(),
        }

    @classmethod
    def from_dict(cls, payload: Dict[Text, Any]) -> FitResult:
        try:
            rho_hat = SpectralModel(
                rho=np.asarray(payload["rho_hat"], dtype=float),
                r=np.asarray(payload["r_hat"], dtype=float),
                delta=float(payload["delta"]),
            )
            per_q = {
                int(q): OrderSummary(
                    lam=float(entry["lambda"]),
                    t_q=float(entry["t_q"]),
                    iterations=int(entry["iterations"]),
                    converged=bool(entry["converged"]),
                    flags=tuple(entry.get("flags", ())),
                )
                for q, entry in payload["per_q"].items()
            }
            result = cls(
                y=np.asarray(payload["y"], dtype=float),
                fhat=np.asarray(payload["fhat"], dtype=float),
                lambda_hat=float(payload["lambda_hat"]),
                q_hat=int(payload["q_hat"]),
                sigma2hat=float(payload["sigma2hat"]),
                rho_hat=rho_hat,
                r_hat=np.asarray(payload["r_hat"], dtype=float),
                edf=float(payload["edf"]),
                coefs=np.asarray(payload["coefs"], dtype=float),
                per_q=per_q,
                flags=tuple(payload.get("flags", ())),
                exact_eta=bool(payload.get("exact_eta", False)),
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise ArtifactError(f"malformed fit artifact: {e}")
        if result.fhat.shape != result.y.shape or result.rho_hat.n != result.n:
            raise ArtifactError("malformed fit artifact: inconsistent vector lengths")
        return result


@dataclass
class _IterationState:
    lam: float
    rho: SpectralModel
    flags: List[Text] = field(default_factory=list)


def validate_observations(y: ArrayLike) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if y.ndim != 1:
        raise DataValidationError(f"observations must be a vector, got shape {y.shape}")
    if y.size < MIN_OBSERVATIONS:
        raise DataValidationError(f"need at least {MIN_OBSERVATIONS} observations, got {y.size}")
    if not np.all(np.isfinite(y)):
        raise DataValidationError("observations contain NaN or Inf values")
    return y


def _is_null_space(coefs: np.ndarray, q: int) -> bool:
    total = float(np.sum(coefs**2))
    return float(np.sum(coefs[q:] ** 2)) <= NULL_SPACE_ENERGY_TOL * total or total == 0.0


def fit_order(
    y: np.ndarray,
    q: int,
    config: FitConfig,
    initial_rho: Optional[SpectralModel] = None,
) -> OrderFit:
    """Inner loop for one penalty order: alternate lambda and spectral updates."""
    n = y.size
    basis = build_basis(n, q, exact=config.exact_eta)
    coefs = basis.coefficients(y)
    grid = config.lambda_grid.values(n, q)
    rho = initial_rho or SpectralModel.flat(n, config.delta)

    if _is_null_space(coefs, q):
        logger.warning(f"Observations lie in the penalty null space for q={q}")
        lam = float(grid[-1])
        return OrderFit(
            q=q,
            lam=lam,
            rho=rho,
            coefs=coefs,
            t_q=t_q(lam, q, rho, coefs, basis.eta),
            iterations=0,
            converged=True,
            flags=(NULL_SPACE_FIT,),
        )

    basis_p = build_basis(n, config.p)
    grid_p = config.lambda_grid.values(n, config.p)
    root = solve_lambda(q, rho, coefs, grid, basis.eta)
    state = _IterationState(lam=root.value, rho=rho)

    converged = False
    iterations = 0
    for iterations in range(1, config.max_iter + 1):
        raw = update_rho(state.lam, q, state.rho, coefs, basis.eta)
        smoothed = smooth_rho(raw, config.p, basis_p, config.delta, grid_p)
        blended = (1.0 - config.damping) * state.rho.rho + config.damping * smoothed.rho
        rho_next = SpectralModel.from_values(blended, config.delta)
        root = solve_lambda(q, rho_next, coefs, grid, basis.eta)

        lam_change = abs(root.value / state.lam - 1.0)
        rho_change = float(np.linalg.norm(rho_next.rho - state.rho.rho)) / n
        logger.debug(
            f"q={q} iteration={iterations} lambda={root.value:.4e} "
            f"lambda_change={lam_change:.2e} rho_change={rho_change:.2e}"
        )
        state.lam, state.rho = root.value, rho_next
        if lam_change < config.tol_lambda and rho_change < config.tol_rho:
            converged = True
            break

    if not root.bracketed:
        state.flags.append(NO_ROOT)
    if not converged:
        logger.warning(f"Inner iteration for q={q} did not converge in {config.max_iter} steps")
        state.flags.append(NOT_CONVERGED)

    return OrderFit(
        q=q,
        lam=state.lam,
        rho=state.rho,
        coefs=coefs,
        t_q=t_q(state.lam, q, state.rho, coefs, basis.eta),
        iterations=iterations,
        converged=converged,
        flags=tuple(state.flags),
    )


def _fit_orders(
    y: np.ndarray, config: FitConfig, initial_rho: Optional[SpectralModel]
) -> Dict[int, OrderFit]:
    if config.workers > 1 and len(config.q_set) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as executor:
            fits = list(executor.map(lambda q: fit_order(y, q, config, initial_rho), config.q_set))
    else:
        fits = [fit_order(y, q, config, initial_rho) for q in config.q_set]
    for order_fit in fits:
        structlogger.debug(
            "driver.fit.order_done",
            q=order_fit.q,
            lam=order_fit.lam,
            t_q=order_fit.t_q,
            iterations=order_fit.iterations,
            converged=order_fit.converged,
        )
    return {order_fit.q: order_fit for order_fit in fits}


def _autocorr_is_psd(r_hat: np.ndarray) -> bool:
    lags = min(r_hat.size, PSD_CHECK_LAGS)
    smallest = scipy.linalg.eigvalsh(scipy.linalg.toeplitz(r_hat[:lags]), subset_by_index=[0, 0])
    return bool(smallest[0] >= -PSD_TOL)


def _assemble(
    y: np.ndarray,
    fits: Dict[int, OrderFit],
    q_hat: int,
    config: FitConfig,
    extra_flags: List[Text],
) -> FitResult:
    chosen = fits[q_hat]
    basis = build_basis(y.size, q_hat, exact=config.exact_eta)
    smooth = apply_fast(SmootherSpec(lam=chosen.lam, q=q_hat, spectral=chosen.rho), y, basis)
    r_hat = autocorr_from_spectral(chosen.rho)

    flags = list(dict.fromkeys([*chosen.flags, *extra_flags]))
    if not _autocorr_is_psd(r_hat):
        logger.warning("Toeplitz matrix of the estimated autocorrelations is not PSD")
        flags.append(AUTOCORR_NOT_PSD)

    per_q = {
        q: OrderSummary(
            lam=fit.lam,
            t_q=fit.t_q,
            iterations=fit.iterations,
            converged=fit.converged,
            flags=fit.flags,
        )
        for q, fit in sorted(fits.items())
    }
    structlogger.info(
        "driver.fit.done",
        q_hat=q_hat,
        lambda_hat=chosen.lam,
        sigma2hat=smooth.sigma2hat,
        edf=smooth.edf,
        flags=flags,
    )
    return FitResult(
        y=y,
        fhat=smooth.fhat,
        lambda_hat=chosen.lam,
        q_hat=q_hat,
        sigma2hat=smooth.sigma2hat,
        rho_hat=chosen.rho,
        r_hat=r_hat,
        edf=smooth.edf,
        coefs=smooth.coefs,
        per_q=per_q,
        flags=tuple(flags),
        exact_eta=config.exact_eta,
    )


def fit(
    y: ArrayLike,
    config: Optional[FitConfig] = None,
    initial_rho: Optional[SpectralModel] = None,
) -> FitResult:
    config = config or FitConfig()
    y = validate_observations(y)
    fits = _fit_orders(y, config, initial_rho)
    choice = solve_q(
        {q: (order_fit.lam, order_fit.rho, order_fit.coefs) for q, order_fit in fits.items()},
        etas={q: build_basis(y.size, q, exact=config.exact_eta).eta for q in fits},
    )
    return _assemble(y, fits, choice.q_hat, config, choice.flags)


def fit_fixed_q(
    y: ArrayLike,
    q: int,
    config: Optional[FitConfig] = None,
    initial_rho: Optional[SpectralModel] = None,
) -> FitResult:
    config = (config or FitConfig()).model_copy(update={"q_set": [q]})
    y = validate_observations(y)
    fits = _fit_orders(y, config, initial_rho)
    return _assemble(y, fits, q, config, [])


@dataclass(frozen=True)
class ResidualDiagnostics:
    residuals: np.ndarray
    sample_acf: np.ndarray
    model_acf: np.ndarray


def residual_diagnostics(result: FitResult, nlags: int = 50) -> ResidualDiagnostics:
    """Residuals and their sample autocorrelation next to the fitted r_hat."""
    residuals = result.y - result.fhat
    nlags = min(nlags, result.n - 1)
    if np.allclose(residuals, 0.0):
        sample = np.zeros(nlags + 1)
        sample[0] = 1.0
    else:
        sample = acf(residuals, nlags=nlags, fft=True)
    return ResidualDiagnostics(
        residuals=residuals,
        sample_acf=np.asarray(sample),
        model_acf=result.r_hat[: nlags + 1].copy(),
    )
