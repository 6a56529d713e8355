"""Parametric bootstrap calibration of prediction intervals.

Three interval constructions share one resampling engine:

* Single-bootstrap EBL interval: replicate the model from the fitted
  parameters, refit each replicate, and read empirical quantiles of the
  standardized prediction error H* = (theta* - eblup*) / sqrt(g1*).  The
  interval is eblup +/- quantile offsets scaled by sqrt(g1_hat).

* Synthetic interval: same replicates, but the statistic is
  M* = (theta* - x'beta*) / sqrt(A*) and the interval is centred at the
  regression-synthetic estimate x'beta_hat with sqrt(A_hat) scaling.  Its
  endpoints do not depend on the area's own y_i given the fit.

* Double bootstrap: for each first-stage replicate j, a second resampling
  level from (beta*_j, A*_j) produces proportions
  Z_j = #(H** <= H*_j) / B2 per area.  The (alpha/2, 1-alpha/2) order
  statistics of {Z_j} replace the raw quantile levels before reading
  offsets from {H*_j}.  Because the calibrated levels are order statistics
  of proportions they always lie in [0, 1].

Determinism contract: first-stage replicate b draws from the substream
(seed, b); second-stage replicate (j, k) from (seed, j, k).  Draw order
within a replicate is fixed (random effect, then sampling error), so
results are independent of worker count and scheduling.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateQuantileError, ReplicateFailureError
from .estimators import (
    DEFAULT_FLOOR,
    FitResult,
    fh_estimate_many,
    fit_model,
    pr_estimate_many,
    wls_beta_many,
)
from .intervals import PredictionInterval
from .model import LinkingDistribution
from .streams import RETRY_TAG, substream

__all__ = [
    "BootstrapConfig",
    "BootstrapDistribution",
    "FirstStage",
    "SecondStage",
    "empirical_quantile",
    "column_quantiles",
    "sb_distribution",
    "sb_interval",
    "hm_interval",
    "db_interval",
    "first_stage",
    "second_stage",
    "calibrate_levels",
    "interval_from_levels",
]

# Second-stage chunking cap: rows of (j, k) pairs fitted per batch.
_CHUNK_ROWS = 20_000


@dataclass(frozen=True)
class BootstrapConfig:
    """Replicate counts, estimator choice, and stream seed."""

    B1: int = 400
    B2: int = 100
    estimator: str = "FH"
    seed: int = 0
    floor: float = DEFAULT_FLOOR
    # Compatibility switch: centre the replicate EBLUP on the original y
    # instead of the replicate's own y*.  Off by default.
    eblup_star_uses_original_y: bool = False

    def __post_init__(self) -> None:
        if self.B1 < 50:
            raise ValueError(f"B1 must be >= 50, got {self.B1}")
        if self.B2 < 0:
            raise ValueError(f"B2 must be >= 0, got {self.B2}")
        est = self.estimator.upper()
        if est not in ("FH", "PR"):
            raise ValueError(f"estimator must be FH or PR, got {self.estimator!r}")
        object.__setattr__(self, "estimator", est)
        if self.seed < 0:
            raise ValueError(f"seed must be a non-negative integer, got {self.seed}")


@dataclass(frozen=True)
class BootstrapDistribution:
    """Matrix of pivot-statistic replicates: column i approximates the
    distribution of the standardized prediction error for area i."""

    H: np.ndarray  # (B1, m)
    truncated: np.ndarray  # (B1,) variance-floor flags of the replicate refits


@dataclass(frozen=True)
class FirstStage:
    """All first-stage replicate state needed downstream."""

    theta_star: np.ndarray  # (B1, m)
    y_star: np.ndarray  # (B1, m)
    beta_star: np.ndarray  # (B1, p)
    A_star: np.ndarray  # (B1,)
    truncated: np.ndarray  # (B1,)
    H: np.ndarray  # (B1, m) EBL pivot statistic
    M: np.ndarray  # (B1, m) synthetic statistic


@dataclass(frozen=True)
class SecondStage:
    """Per-area calibration proportions and truncation accounting."""

    Z: np.ndarray  # (B1, m)
    n_truncated: int
    n_fits: int


def empirical_quantile(values: np.ndarray, gamma: float) -> float:
    """Order-statistic quantile: v_(ceil(gamma*B)) on sorted values, v_(1) at 0."""
    v = np.sort(np.ravel(values))
    return float(_pick(v, float(gamma)))


def _indices(gammas: np.ndarray, B: int) -> np.ndarray:
    # guard the ceil against float fuzz like 0.025*400 = 10.000000000000002
    k = np.ceil(np.asarray(gammas, float) * B - 1e-9).astype(int)
    return np.clip(k, 1, B) - 1


def _pick(sorted_v: np.ndarray, gamma: float) -> float:
    return sorted_v[_indices(np.array([gamma]), sorted_v.size)[0]]


def column_quantiles(matrix: np.ndarray, gammas: np.ndarray) -> np.ndarray:
    """Per-column order-statistic quantiles; gammas may vary by column."""
    B, m = matrix.shape
    gammas = np.broadcast_to(np.asarray(gammas, float), (m,))
    srt = np.sort(matrix, axis=0)
    return srt[_indices(gammas, B), np.arange(m)]


def _refit(X, Ymat, D, estimator, floor):
    """Batched refit returning (beta (B,p), A (B,), truncated (B,))."""
    if estimator == "FH":
        A, trunc = fh_estimate_many(X, Ymat, D, floor=floor)
    else:
        A, trunc, _ = pr_estimate_many(X, Ymat, D, floor=floor)
    beta = wls_beta_many(X, Ymat, A, D)
    return beta, A, trunc


def _bad_rows(beta, A):
    return ~(np.isfinite(A) & np.all(np.isfinite(beta), axis=1))


def first_stage(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    G: LinkingDistribution,
    config: BootstrapConfig,
    fit: FitResult | None = None,
) -> tuple[FitResult, FirstStage]:
    """Draw and refit B1 replicates from the fitted model."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.ravel(np.asarray(Y, float))
    D = np.ravel(np.asarray(D, float))
    if fit is None:
        fit = fit_model(X, Y, D, method=config.estimator, floor=config.floor)
    elif fit.method != config.estimator:
        raise ValueError(
            f"fit uses estimator {fit.method} but config asks for {config.estimator}"
        )
    m = X.shape[0]
    B1 = config.B1
    synth = fit.synthetic(X)
    sqrtA = math.sqrt(fit.A_hat)
    sqrtD = np.sqrt(D)

    theta_star = np.empty((B1, m))
    y_star = np.empty((B1, m))
    for b in range(B1):
        rng = substream(config.seed, b)
        theta_star[b] = synth + sqrtA * G.standardized_draw(rng, m)
        y_star[b] = theta_star[b] + sqrtD * rng.standard_normal(m)

    beta_star, A_star, truncated = _refit(X, y_star, D, config.estimator, config.floor)

    bad = np.flatnonzero(_bad_rows(beta_star, A_star))
    if bad.size:
        for b in bad:
            rng = substream(config.seed, int(b), RETRY_TAG)
            theta_star[b] = synth + sqrtA * G.standardized_draw(rng, m)
            y_star[b] = theta_star[b] + sqrtD * rng.standard_normal(m)
        beta_r, A_r, trunc_r = _refit(X, y_star[bad], D, config.estimator, config.floor)
        beta_star[bad], A_star[bad], truncated[bad] = beta_r, A_r, trunc_r
        still = bad[_bad_rows(beta_r, A_r)]
        if still.size:
            raise ReplicateFailureError(int(still[0]))

    B_star = D[None, :] / (A_star[:, None] + D[None, :])
    synth_star = beta_star @ X.T
    y_centre = np.broadcast_to(Y, y_star.shape) if config.eblup_star_uses_original_y else y_star
    eblup_star = (1.0 - B_star) * y_centre + B_star * synth_star
    g1_star = A_star[:, None] * D[None, :] / (A_star[:, None] + D[None, :])
    H = (theta_star - eblup_star) / np.sqrt(g1_star)
    M = (theta_star - synth_star) / np.sqrt(A_star)[:, None]
    return fit, FirstStage(
        theta_star=theta_star,
        y_star=y_star,
        beta_star=beta_star,
        A_star=A_star,
        truncated=truncated,
        H=H,
        M=M,
    )


def second_stage(
    X: np.ndarray,
    D: np.ndarray,
    G: LinkingDistribution,
    config: BootstrapConfig,
    fs: FirstStage,
) -> SecondStage:
    """Nested resampling: Z_{j,i} = #(H**_{j,.,i} <= H*_{j,i}) / B2.

    Ties count as <=.  Replicate (j, k) draws from the substream
    (seed, j, k); a failed refit is retried once from (seed, j, k, retry).
    """
    if config.B2 < 20:
        raise ValueError(f"double bootstrap needs B2 >= 20, got B2={config.B2}")
    X = np.atleast_2d(np.asarray(X, float))
    D = np.ravel(np.asarray(D, float))
    m = X.shape[0]
    B1, B2 = config.B1, config.B2
    sqrtD = np.sqrt(D)
    synth_star = fs.beta_star @ X.T  # (B1, m)
    sqrtA_star = np.sqrt(fs.A_star)

    Z = np.empty((B1, m))
    n_trunc = 0
    block = max(1, _CHUNK_ROWS // B2)
    for j0 in range(0, B1, block):
        js = range(j0, min(j0 + block, B1))
        nj = len(js)
        theta2 = np.empty((nj * B2, m))
        y2 = np.empty((nj * B2, m))
        row = 0
        for j in js:
            mu, sa = synth_star[j], sqrtA_star[j]
            for k in range(B2):
                rng = substream(config.seed, j, k)
                theta2[row] = mu + sa * G.standardized_draw(rng, m)
                y2[row] = theta2[row] + sqrtD * rng.standard_normal(m)
                row += 1
        beta2, A2, trunc2 = _refit(X, y2, D, config.estimator, config.floor)

        bad = np.flatnonzero(_bad_rows(beta2, A2))
        if bad.size:
            for r in bad:
                j = j0 + int(r) // B2
                k = int(r) % B2
                rng = substream(config.seed, j, k, RETRY_TAG)
                theta2[r] = synth_star[j] + sqrtA_star[j] * G.standardized_draw(rng, m)
                y2[r] = theta2[r] + sqrtD * rng.standard_normal(m)
            beta_r, A_r, trunc_r = _refit(X, y2[bad], D, config.estimator, config.floor)
            beta2[bad], A2[bad], trunc2[bad] = beta_r, A_r, trunc_r
            still = bad[_bad_rows(beta_r, A_r)]
            if still.size:
                raise ReplicateFailureError(int(still[0]))

        n_trunc += int(trunc2.sum())
        B2_mat = D[None, :] / (A2[:, None] + D[None, :])
        eblup2 = (1.0 - B2_mat) * y2 + B2_mat * (beta2 @ X.T)
        g1_2 = A2[:, None] * D[None, :] / (A2[:, None] + D[None, :])
        H2 = (theta2 - eblup2) / np.sqrt(g1_2)
        H2 = H2.reshape(nj, B2, m)
        Z[j0 : j0 + nj] = np.mean(H2 <= fs.H[j0 : j0 + nj, None, :], axis=1)
    return SecondStage(Z=Z, n_truncated=n_trunc, n_fits=B1 * B2)


def calibrate_levels(Z: np.ndarray, alpha: float) -> tuple[np.ndarray, np.ndarray]:
    """Order-statistic calibration of the quantile levels from Z.

    Returns per-area (alpha_l, alpha_u): the alpha/2 and 1 - alpha/2
    empirical quantiles of {Z_j}.  Both lie in [0, 1] by construction.
    """
    alpha_l = column_quantiles(Z, alpha / 2.0)
    alpha_u = column_quantiles(Z, 1.0 - alpha / 2.0)
    return alpha_l, alpha_u


def _check_columns(H: np.ndarray) -> None:
    spread = H.max(axis=0) - H.min(axis=0)
    flat = np.flatnonzero(spread == 0.0)
    if flat.size:
        raise DegenerateQuantileError(
            f"replicate column {int(flat[0])} is constant; quantile spread is zero"
        )


def interval_from_levels(
    H: np.ndarray,
    fit: FitResult,
    alpha_l,
    alpha_u,
    method: str,
    nominal: float,
) -> list[PredictionInterval]:
    """EBL intervals eblup + q sqrt(g1) with per-area quantile levels."""
    _check_columns(H)
    q_l = column_quantiles(H, alpha_l)
    q_u = column_quantiles(H, alpha_u)
    scale = np.sqrt(fit.g1_hat)
    return [
        PredictionInterval(
            area_index=i,
            lower=float(fit.eblup[i] + q_l[i] * scale[i]),
            upper=float(fit.eblup[i] + q_u[i] * scale[i]),
            method=method,
            nominal=nominal,
            q_lower=float(q_l[i]),
            q_upper=float(q_u[i]),
        )
        for i in range(fit.eblup.size)
    ]


def sb_distribution(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    G: LinkingDistribution,
    config: BootstrapConfig,
    fit: FitResult | None = None,
) -> BootstrapDistribution:
    """First-stage pivot-statistic replicates under the fitted model."""
    _, fs = first_stage(X, Y, D, G, config, fit=fit)
    return BootstrapDistribution(H=fs.H, truncated=fs.truncated)


def sb_interval(
    distribution: BootstrapDistribution,
    fit: FitResult,
    alpha: float,
) -> list[PredictionInterval]:
    """Single-bootstrap EBL interval at miscoverage alpha."""
    method = "SB_PR" if fit.method == "PR" else "SB_FH"
    return interval_from_levels(
        distribution.H, fit, alpha / 2.0, 1.0 - alpha / 2.0, method, 1.0 - alpha
    )


def hm_interval(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    G: LinkingDistribution,
    config: BootstrapConfig,
    alpha: float,
    fit: FitResult | None = None,
) -> list[PredictionInterval]:
    """Synthetic bootstrap interval x'beta_hat + b sqrt(A_hat)."""
    fit, fs = first_stage(X, Y, D, G, config, fit=fit)
    return _hm_from_stage(X, fit, fs, alpha)


def _hm_from_stage(X, fit, fs, alpha):
    _check_columns(fs.M)
    b_l = column_quantiles(fs.M, alpha / 2.0)
    b_u = column_quantiles(fs.M, 1.0 - alpha / 2.0)
    synth = fit.synthetic(X)
    scale = math.sqrt(fit.A_hat)
    method = "HM_PR" if fit.method == "PR" else "HM_FH"
    return [
        PredictionInterval(
            area_index=i,
            lower=float(synth[i] + b_l[i] * scale),
            upper=float(synth[i] + b_u[i] * scale),
            method=method,
            nominal=1.0 - alpha,
            q_lower=float(b_l[i]),
            q_upper=float(b_u[i]),
        )
        for i in range(synth.size)
    ]


def db_interval(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    G: LinkingDistribution,
    config: BootstrapConfig,
    alpha: float,
    fit: FitResult | None = None,
) -> list[PredictionInterval]:
    """Double-bootstrap EBL interval with level recalibration."""
    if config.B2 == 0:
        raise ValueError("double bootstrap requires B2 > 0")
    fit, fs = first_stage(X, Y, D, G, config, fit=fit)
    ss = second_stage(X, D, G, config, fs)
    alpha_l, alpha_u = calibrate_levels(ss.Z, alpha)
    method = "DB_PR" if fit.method == "PR" else "DB_FH"
    return interval_from_levels(fs.H, fit, alpha_l, alpha_u, method, 1.0 - alpha)
