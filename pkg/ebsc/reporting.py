from __future__ import annotations

import json
import math
import os
from typing import Any, Dict, List, Optional, Text

import numpy as np
import pandas as pd
from rich import print

from ebsc import TOOL_NAME, __version__
from ebsc.credible import CredibleSet
from ebsc.driver import FitResult, residual_diagnostics
from ebsc.exceptions import ArtifactError

FLOAT_FORMAT = "%.12g"


def header_line(config_hash: Text, seed: Optional[int]) -> Text:
    return f"# {TOOL_NAME} {__version__} config={config_hash} seed={seed}"


def artifact_meta(config_hash: Text, seed: Optional[int]) -> Dict[Text, Any]:
    return {"tool": TOOL_NAME, "version": __version__, "config_hash": config_hash, "seed": seed}


def _ensure_parent(filename: Text) -> None:
    directory = os.path.dirname(filename)
    if directory:
        os.makedirs(directory, exist_ok=True)


def write_csv(frame: pd.DataFrame, filename: Text, config_hash: Text, seed: Optional[int]) -> None:
    """Writes a CSV preceded by the provenance header, independent of locale."""
    _ensure_parent(filename)
    with open(filename, "w", encoding="utf-8", newline="") as csv_file:
        csv_file.write(header_line(config_hash, seed) + "\n")
        frame.to_csv(csv_file, index=False, lineterminator="\n", float_format=FLOAT_FORMAT)


def _to_builtin(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(key): _to_builtin(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_builtin(item) for item in value]
    if isinstance(value, np.ndarray):
        return _to_builtin(value.tolist())
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


def write_json(payload: Dict[Text, Any], filename: Text, config_hash: Text, seed: Optional[int]) -> None:
    _ensure_parent(filename)
    document = {"meta": artifact_meta(config_hash, seed), **_to_builtin(payload)}
    with open(filename, "w", encoding="utf-8", newline="\n") as json_file:
        json.dump(document, json_file, indent=4)
        json_file.write("\n")


def read_json(filename: Text) -> Dict[Text, Any]:
    try:
        with open(filename, encoding="utf-8") as json_file:
            payload = json.load(json_file)
    except (OSError, json.JSONDecodeError) as e:
        raise ArtifactError(f"cannot read artifact {filename}: {e}")
    if not isinstance(payload, dict):
        raise ArtifactError(f"artifact {filename} does not hold a JSON object")
    return payload


def save_distributions(
    distributions: Dict[Text, List[float]], filename: Text, config_hash: Text, seed: Optional[int]
) -> None:
    """Dumps per-replication metric samples for later plotting.

    Args:
        distributions: metric name -> one value per replication.
        filename: target JSON path; parent directories are created.
        config_hash: provenance hash written into the header block.
        seed: base seed of the run.
    """
    write_json(distributions, filename, config_hash, seed)
    print(f"Distributions saved to {filename}")


def print_statistics(distributions: Dict[Text, List[float]], title: Text) -> None:
    def _print_stats(data, name):
        data = np.asarray(data, dtype=float)
        data = data[np.isfinite(data)]
        if data.size == 0:
            print(f"--- {name} ---\nno finite values\n")
            return
        print(f"--- {name} ---")
        print(f"Mean: {np.mean(data)}")
        print(f"Min: {np.min(data)}")
        print(f"Max: {np.max(data)}")
        print(f"Median: {np.median(data)}")
        print(f"Standard Deviation: {np.std(data)}")
        print(f"25th Percentile (P25): {np.percentile(data, 25)}")
        print(f"75th Percentile (P75): {np.percentile(data, 75)}")
        print("---------------------------------\n")

    print(f"[bold]{title}[/bold]")
    for name, data in distributions.items():
        _print_stats(data, name)


def curve_frame(
    result: FitResult, bands: Optional[CredibleSet] = None, design: Optional[np.ndarray] = None
) -> pd.DataFrame:
    """Observations, fit and band per design point; without a design t_i = (i-1)/(n-1)."""
    t = np.linspace(0.0, 1.0, result.n) if design is None else np.asarray(design, dtype=float)
    lower = bands.lower if bands is not None else np.full(result.n, np.nan)
    upper = bands.upper if bands is not None else np.full(result.n, np.nan)
    return pd.DataFrame({"t": t, "y": result.y, "fhat": result.fhat, "band_lo": lower, "band_hi": upper})


def spectrum_frame(result: FitResult) -> pd.DataFrame:
    return pd.DataFrame({"t": np.linspace(0.0, 1.0, result.n), "rho_hat": result.rho_hat.rho})


def autocorr_frame(result: FitResult) -> pd.DataFrame:
    return pd.DataFrame({"lag": np.arange(result.n), "r_hat": result.r_hat})


def tq_frame(result: FitResult) -> pd.DataFrame:
    return pd.DataFrame(
        {
            "q": list(result.per_q),
            "t_q": [summary.t_q for summary in result.per_q.values()],
            "lambda": [summary.lam for summary in result.per_q.values()],
        }
    )


def residuals_frame(result: FitResult, nlags: int = 50) -> pd.DataFrame:
    """Residual series next to sample and model autocorrelations (padded with NaN)."""
    diagnostics = residual_diagnostics(result, nlags)
    frame = pd.DataFrame(
        {"t": np.linspace(0.0, 1.0, result.n), "residual": diagnostics.residuals}
    )
    lags = diagnostics.sample_acf.size
    frame["lag"] = pd.Series(np.arange(lags)).astype("Int64")
    frame["sample_acf"] = pd.Series(diagnostics.sample_acf)
    frame["model_acf"] = pd.Series(diagnostics.model_acf)
    return frame


def bands_frame(bands: CredibleSet) -> pd.DataFrame:
    return pd.DataFrame({"t": bands.t, "lo": bands.lower, "hi": bands.upper})
