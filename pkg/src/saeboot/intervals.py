"""Baseline (non-bootstrap) prediction intervals.

``alpha`` in this module and everywhere else in the library is the
miscoverage probability: a 95% interval has alpha = 0.05.  The
:class:`PredictionInterval` record carries the nominal coverage level
1 - alpha instead, matching how results are reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri

from .estimators import FitResult, MspeEstimate

__all__ = ["METHODS", "PredictionInterval", "z_quantile", "direct_interval", "traditional_interval"]

METHODS = ("Direct", "TradFH", "TradPR", "SB_FH", "SB_PR", "HM_FH", "HM_PR", "DB_FH", "DB_PR")


@dataclass(frozen=True)
class PredictionInterval:
    """One per-area interval with its calibration metadata.

    ``q_lower``/``q_upper`` are the dimensionless calibrated quantile offsets
    (None for the Direct and traditional methods, which use the fixed normal
    quantile).
    """

    area_index: int
    lower: float
    upper: float
    method: str
    nominal: float
    q_lower: float | None = None
    q_upper: float | None = None

    def __post_init__(self) -> None:
        if not (0.0 < self.nominal < 1.0):
            raise ValueError(f"nominal coverage must lie in (0,1), got {self.nominal}")
        if not self.lower < self.upper:
            raise ValueError(f"degenerate interval [{self.lower}, {self.upper}]")

    @property
    def length(self) -> float:
        return self.upper - self.lower

    def contains(self, value: float) -> bool:
        return self.lower <= value <= self.upper


def z_quantile(p: float) -> float:
    """Standard normal quantile, exact to double precision."""
    if not (0.0 < p < 1.0):
        raise ValueError(f"p must lie in (0,1), got {p}")
    return float(ndtri(p))


def _check_alpha(alpha: float) -> float:
    if not (0.0 < alpha < 1.0):
        raise ValueError(f"alpha must lie in (0,1), got {alpha}")
    return float(alpha)


def direct_interval(y_i: float, D_i: float, alpha: float, area_index: int = 0) -> PredictionInterval:
    """Level-1 interval y_i +/- z_{alpha/2} sqrt(D_i); exact 1 - alpha coverage."""
    alpha = _check_alpha(alpha)
    if D_i <= 0:
        raise ValueError(f"D_i must be > 0, got {D_i}")
    half = z_quantile(1.0 - alpha / 2.0) * np.sqrt(D_i)
    return PredictionInterval(
        area_index=area_index,
        lower=float(y_i - half),
        upper=float(y_i + half),
        method="Direct",
        nominal=1.0 - alpha,
    )


def traditional_interval(fit: FitResult, mspe: MspeEstimate, alpha: float) -> list[PredictionInterval]:
    """EBLUP +/- z_{alpha/2} sqrt(mspe_i) for every area."""
    alpha = _check_alpha(alpha)
    if fit.eblup.shape != mspe.mspe.shape:
        raise ValueError("fit and mspe cover different numbers of areas")
    z = z_quantile(1.0 - alpha / 2.0)
    half = z * np.sqrt(mspe.mspe)
    method = "TradPR" if fit.method == "PR" else "TradFH"
    return [
        PredictionInterval(
            area_index=i,
            lower=float(fit.eblup[i] - half[i]),
            upper=float(fit.eblup[i] + half[i]),
            method=method,
            nominal=1.0 - alpha,
        )
        for i in range(fit.eblup.size)
    ]
