from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import lru_cache
from typing import Literal, Optional, Text, Tuple, Union

import numpy as np
import scipy.fft
import scipy.linalg
from numpy.typing import ArrayLike
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator
from scipy.optimize import brentq
from statsmodels.tsa.arima_process import ArmaProcess, arma_acf

from ebsc.exceptions import (
    NotPositiveDefiniteError,
    ScenarioError,
    SpectralConstructionError,
)

logger = logging.getLogger(__name__)

DEFAULT_DELTA = 0.05
STUDY_SIGMA = 0.33
GP_FREQUENCY = 6.5
GP_RANGE = 20.0
DENSE_SAMPLING_MAX_N = 2048
NONPOSITIVE_SHARE_LIMIT = 0.10
NORMALIZATION_TOL = 1e-8
TOEPLITZ_MAX_LAG = 200

NoiseKind = Literal["iid", "ar1", "ma1", "arma22", "gp_kernel"]
PARAM_COUNTS = {"iid": (0,), "ar1": (1,), "ma1": (1,), "arma22": (4,), "gp_kernel": (0, 2)}
DEFAULT_PARAMS = {"arma22": (0.7, -0.4, -0.2, 0.2), "gp_kernel": (GP_FREQUENCY, GP_RANGE)}


class NoiseSpec(BaseModel):
    """Stationary Gaussian noise process with unit marginal variance scaled by sigma.

    ``params`` holds phi for ar1, theta for ma1, (phi1, phi2, theta1, theta2)
    for arma22 and (frequency, range) for gp_kernel.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    kind: NoiseKind
    params: Tuple[float, ...] = ()
    sigma: float = Field(STUDY_SIGMA, gt=0)

    @model_validator(mode="after")
    def _check_params(self) -> NoiseSpec:
        if len(self.params) not in PARAM_COUNTS[self.kind]:
            raise ValueError(
                f"{self.kind} expects {PARAM_COUNTS[self.kind]} parameters, got {len(self.params)}"
            )
        if self.kind in ("ar1", "ma1", "arma22"):
            process = ArmaProcess(*self.arma_polynomials())
            if not process.isstationary:
                raise ValueError(f"AR part of {self.label} is not causal")
            if not process.isinvertible:
                raise ValueError(f"MA part of {self.label} is not invertible")
        return self

    @property
    def kernel_params(self) -> Tuple[float, float]:
        return tuple(self.params) if self.params else DEFAULT_PARAMS["gp_kernel"]

    def arma_polynomials(self) -> Tuple[np.ndarray, np.ndarray]:
        """Lag polynomials including the zero lag, statsmodels sign convention."""
        if self.kind == "ar1":
            return np.array([1.0, -self.params[0]]), np.array([1.0])
        if self.kind == "ma1":
            return np.array([1.0]), np.array([1.0, self.params[0]])
        if self.kind == "arma22":
            phi1, phi2, theta1, theta2 = self.params
            return np.array([1.0, -phi1, -phi2]), np.array([1.0, theta1, theta2])
        return np.array([1.0]), np.array([1.0])

    @property
    def label(self) -> Text:
        if self.kind == "iid":
            return "iid"
        if self.kind == "ar1":
            return f"AR1({self.params[0]:g})"
        if self.kind == "ma1":
            return f"MA1({self.params[0]:g})"
        if self.kind == "arma22":
            return "AR2MA2"
        return "GP"


def parse_noise(text: Text, sigma: float = STUDY_SIGMA) -> NoiseSpec:
    """Parses ``iid``, ``ar1:0.9``, ``ma1:-0.5``, ``arma22[:p1,p2,t1,t2]`` or ``gp``."""
    kind, _, raw = text.strip().lower().partition(":")
    kind = {"gp": "gp_kernel", "ar2ma2": "arma22"}.get(kind, kind)
    try:
        params = tuple(float(value) for value in raw.split(",")) if raw else ()
        if not params and kind in DEFAULT_PARAMS:
            params = DEFAULT_PARAMS[kind]
        return NoiseSpec(kind=kind, params=params, sigma=sigma)
    except (ValueError, ValidationError) as e:
        raise ScenarioError(f"invalid noise specification '{text}': {e}")


def _cosine_quadrature(values: np.ndarray) -> np.ndarray:
    """n^-1 sum_l cos(k pi (l-1)/(n-1)) values_l for k = 0..n-1 via DCT-I."""
    n = values.size
    transformed = scipy.fft.dct(values, type=1)
    alternating = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return (transformed + values[0] + alternating * values[-1]) / (2.0 * n)


def _normalize_to_box(values: np.ndarray, delta: float) -> np.ndarray:
    """Truncates to [delta, 1/delta] and rescales so the values sum to n."""
    n = values.size
    lower, upper = delta, 1.0 / delta
    values = np.where(np.isfinite(values), np.maximum(values, 0.0), 0.0)
    if not np.any(values > 0):
        return np.ones(n)

    def excess(log_scale: float) -> float:
        return float(np.clip(np.exp(log_scale) * values, lower, upper).sum() - n)

    low = np.log(lower / values.max()) - 1.0
    high = np.log(upper / values[values > 0].min()) + 1.0
    if excess(high) < 0:
        # too few positive entries to reach the total inside the box
        rho = np.clip(np.exp(high) * values, lower, upper)
        floor = rho <= lower
        rho[floor] += (n - rho.sum()) / floor.sum()
        return rho
    log_scale = brentq(excess, low, high, xtol=1e-14, maxiter=500)
    rho = np.clip(np.exp(log_scale) * values, lower, upper)
    return rho * (n / rho.sum())


@dataclass(frozen=True)
class SpectralModel:
    """Spectral values rho_i = rho(pi t_i) and the matching autocorrelations."""

    rho: np.ndarray
    r: np.ndarray
    delta: float = DEFAULT_DELTA

    def __post_init__(self) -> None:
        n = self.rho.size
        slack = 1e-9
        if np.any(self.rho < self.delta * (1 - slack)) or np.any(self.rho > (1 + slack) / self.delta):
            raise SpectralConstructionError("spectral values leave [delta, 1/delta]")
        if abs(self.rho.sum() - n) > NORMALIZATION_TOL * n:
            raise SpectralConstructionError(f"spectral values sum to {self.rho.sum()}, expected {n}")
        self.rho.setflags(write=False)
        self.r.setflags(write=False)

    @property
    def n(self) -> int:
        return self.rho.size

    @classmethod
    def from_values(cls, values: ArrayLike, delta: float = DEFAULT_DELTA) -> SpectralModel:
        rho = _normalize_to_box(np.asarray(values, dtype=float), delta)
        return cls(rho=rho, r=_cosine_quadrature(rho), delta=delta)

    @classmethod
    def flat(cls, n: int, delta: float = DEFAULT_DELTA) -> SpectralModel:
        rho = np.ones(n)
        return cls(rho=rho, r=_cosine_quadrature(rho), delta=delta)

    def toeplitz(self, max_lag: Optional[int] = TOEPLITZ_MAX_LAG) -> np.ndarray:
        """n x n correlation matrix with autocorrelations beyond ``max_lag`` set to zero."""
        row = np.array(self.r, dtype=float)
        if max_lag is not None:
            row[max_lag + 1 :] = 0.0
        return scipy.linalg.toeplitz(row)

    def as_function(self):
        """Linear interpolant of t -> rho(pi t) on [0, 1]."""
        grid = np.linspace(0.0, 1.0, self.n)
        return lambda t: np.interp(np.clip(t, 0.0, 1.0), grid, self.rho)


def cosine_series(r: ArrayLike, n: int) -> np.ndarray:
    """Raw values 1 + 2 sum_{k>=1} r_k cos(k pi t_i) on the n-point grid."""
    r = np.asarray(r, dtype=float)
    padded = np.zeros(n)
    padded[: min(n, r.size)] = r[:n]
    transformed = scipy.fft.dct(padded, type=1)
    alternating = np.where(np.arange(n) % 2 == 0, 1.0, -1.0)
    return transformed - padded[0] + alternating * padded[-1] + 1.0


def spectral_from_autocorr(
    r: ArrayLike, n: int, delta: float = DEFAULT_DELTA
) -> SpectralModel:
    r = np.asarray(r, dtype=float)
    if r.size == 0 or abs(r[0] - 1.0) > 1e-6:
        raise SpectralConstructionError("autocorrelation vector must start with r_0 = 1")
    raw = cosine_series(r, n)
    share = float(np.mean(raw <= 0))
    if share > NONPOSITIVE_SHARE_LIMIT:
        raise SpectralConstructionError(
            f"{share:.0%} of raw spectral values are non-positive, input is likely not PSD"
        )
    if share > 0:
        logger.warning(f"Truncating {share:.1%} non-positive spectral values at delta={delta}")
    return SpectralModel.from_values(raw, delta)


def autocorr_from_spectral(model: SpectralModel) -> np.ndarray:
    return _cosine_quadrature(np.asarray(model.rho))


def _gp_kernel_row(n: int, frequency: float, decay: float, delta: float) -> np.ndarray:
    lags = np.arange(n)
    row = np.cos(frequency * lags) * np.exp(-lags / decay)
    embedding = np.concatenate([row, row[-2:0:-1]])
    eigenvalues = np.maximum(np.real(scipy.fft.fft(embedding)), delta)
    projected = np.real(scipy.fft.ifft(eigenvalues))[:n]
    return projected / projected[0]


@lru_cache(maxsize=64)
def _autocorrelation_row(spec: NoiseSpec, n: int, delta: float) -> np.ndarray:
    if spec.kind == "iid":
        row = np.zeros(n)
        row[0] = 1.0
    elif spec.kind == "gp_kernel":
        row = _gp_kernel_row(n, *spec.kernel_params, delta=delta)
    else:
        row = arma_acf(*spec.arma_polynomials(), lags=n)
    row.setflags(write=False)
    return row


def true_autocorrelation(spec: NoiseSpec, n: int, delta: float = DEFAULT_DELTA) -> np.ndarray:
    """First row of the target correlation matrix (PSD-projected for gp_kernel)."""
    return _autocorrelation_row(spec, n, delta)


def noise_covariance(spec: NoiseSpec, n: int, delta: float = DEFAULT_DELTA) -> np.ndarray:
    return scipy.linalg.toeplitz(true_autocorrelation(spec, n, delta))


def true_spectral(spec: NoiseSpec, n: int, delta: float = DEFAULT_DELTA) -> SpectralModel:
    frequencies = np.pi * np.linspace(0.0, 1.0, n)
    if spec.kind == "iid":
        return SpectralModel.flat(n, delta)
    if spec.kind == "gp_kernel":
        raw = cosine_series(true_autocorrelation(spec, n, delta), n)
        return SpectralModel.from_values(raw, delta)
    ar, ma = spec.arma_polynomials()
    unit = np.exp(1j * frequencies)
    numerator = np.abs(np.polynomial.polynomial.polyval(unit, ma)) ** 2
    denominator = np.abs(np.polynomial.polynomial.polyval(unit, ar)) ** 2
    return SpectralModel.from_values(numerator / denominator, delta)


@lru_cache(maxsize=16)
def _cholesky_factor(spec: NoiseSpec, n: int, delta: float) -> np.ndarray:
    try:
        factor = scipy.linalg.cholesky(noise_covariance(spec, n, delta), lower=True)
    except np.linalg.LinAlgError as e:
        raise NotPositiveDefiniteError(f"correlation matrix of {spec.label} is not PD: {e}")
    factor.setflags(write=False)
    return factor


def _circulant_draw(row: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = row.size
    embedding = np.concatenate([row, row[-2:0:-1]])
    size = embedding.size
    eigenvalues = np.real(scipy.fft.fft(embedding))
    if eigenvalues.min() < -1e-8 * eigenvalues.max():
        raise NotPositiveDefiniteError("circulant embedding is not non-negative definite")
    eigenvalues = np.maximum(eigenvalues, 0.0)
    z = rng.standard_normal(size) + 1j * rng.standard_normal(size)
    return np.real(scipy.fft.fft(z * np.sqrt(eigenvalues / size)))[:n]


def simulate_noise(
    spec: NoiseSpec,
    n: int,
    seed: Union[int, np.random.SeedSequence, None],
    delta: float = DEFAULT_DELTA,
) -> np.ndarray:
    rng = np.random.default_rng(seed)
    if n <= DENSE_SAMPLING_MAX_N:
        draw = _cholesky_factor(spec, n, delta) @ rng.standard_normal(n)
    else:
        draw = _circulant_draw(true_autocorrelation(spec, n, delta), rng)
    return spec.sigma * draw
