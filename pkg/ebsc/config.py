from __future__ import annotations

import hashlib
from typing import Any, Dict, List, Literal, Optional, Text

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator

from ebsc.noise_model import NoiseSpec

SUPPORTED_ORDERS = (1, 2, 3, 4, 5, 6)


class LambdaGrid(BaseModel):
    """Geometric search grid for the smoothing parameter.

    The grid is laid out in the bandwidth s = lambda^(1/(2q)) so that the
    same settings span interpolation through the polynomial fit for every
    penalty order: s runs from ``min / (n - 1)`` to ``max``.
    """

    model_config = ConfigDict(frozen=True, extra="forbid")

    min: float = Field(0.1, gt=0)
    max: float = Field(10.0, gt=0)
    points: int = Field(101, ge=3)

    def values(self, n: int, q: int) -> np.ndarray:
        bandwidths = np.geomspace(self.min / (n - 1), self.max, self.points)
        return bandwidths ** (2 * q)


class FitConfig(BaseModel):
    model_config = ConfigDict(frozen=True, extra="forbid")

    q_set: List[int] = Field(default_factory=lambda: list(SUPPORTED_ORDERS))
    delta: float = Field(0.05, gt=0, lt=1)
    p: int = 2
    lambda_grid: LambdaGrid = Field(default_factory=LambdaGrid)
    max_iter: int = Field(50, ge=1)
    tol_lambda: float = Field(1e-3, gt=0)
    tol_rho: float = Field(1e-4, gt=0)
    damping: float = Field(0.5, gt=0, le=1)
    workers: int = Field(1, ge=1)
    exact_eta: bool = False

    @field_validator("q_set")
    @classmethod
    def _check_orders(cls, value: List[int]) -> List[int]:
        if not value:
            raise ValueError("q_set must contain at least one order")
        unsupported = [q for q in value if q not in SUPPORTED_ORDERS]
        if unsupported:
            raise ValueError(f"unsupported penalty orders {unsupported}")
        return sorted(set(value))

    @field_validator("p")
    @classmethod
    def _check_p(cls, value: int) -> int:
        if value not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported spectral smoothing order {value}")
        return value

    @staticmethod
    def get_default_config() -> Dict[Text, Any]:
        return FitConfig().model_dump()

    @classmethod
    def from_overrides(cls, overrides: Optional[Dict[Text, Any]] = None) -> FitConfig:
        """Merges non-empty overrides into the default configuration."""
        overrides = {k: v for k, v in (overrides or {}).items() if v is not None}
        grid = {**cls.get_default_config()["lambda_grid"], **overrides.pop("lambda_grid", {})}
        return cls(**{**cls.get_default_config(), **overrides, "lambda_grid": grid})

    def config_hash(self) -> Text:
        return hashlib.sha256(self.model_dump_json().encode("utf-8")).hexdigest()[:16]


class ScenarioConfig(BaseModel):
    """One cell of the Monte-Carlo study: a test signal under one noise process."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    function: Literal["f1", "f2", "f3"] = "f1"
    noise: NoiseSpec = Field(default_factory=lambda: NoiseSpec(kind="iid"))
    n: int = Field(500, ge=30)
    M: int = Field(50, ge=1)
    q_mode: Literal["fixed", "adaptive"] = "fixed"
    fixed_q: int = 2
    seed: int = Field(0, ge=0)
    workers: int = Field(1, ge=1)
    fit: FitConfig = Field(default_factory=FitConfig)

    @field_validator("fixed_q")
    @classmethod
    def _check_fixed_q(cls, value: int) -> int:
        if value not in SUPPORTED_ORDERS:
            raise ValueError(f"unsupported penalty order {value}")
        return value

    def config_hash(self) -> Text:
        payload = self.model_dump_json(exclude={"workers"})
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]
