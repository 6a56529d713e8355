"""Variance-component estimation and point prediction.

Two estimators of the random-effect variance A are provided:

* ``fh_estimate`` solves the weighted moment equation

      f(A) = sum_i (y_i - x_i' beta~(A))^2 / (A + D_i) - (m - p) = 0

  by the method of scoring, using the expected slope E(f'(A)) = -tr(P(A))
  where P = S^-1 - S^-1 X (X'S^-1 X)^-1 X'S^-1 and S = diag(A + D).  f is
  decreasing and convex in A, so a sign check at A = 0 decides existence of
  a positive root before iterating.

* ``pr_estimate`` is the closed-form method-of-moments estimator

      A_raw = [ Y'(I - P_X)Y - tr((I - P_X) diag(D)) ] / (m - p)

  with P_X the ordinary least-squares projection onto col(X).

Both floor non-positive (or non-convergent) estimates at a small positive
truncation value and flag the event; the flags feed the negative-estimate
accounting of the simulation harness.

Batched variants (`fh_estimate_many`, `pr_estimate_many`) fit many response
vectors against one design at once; the bootstrap engine depends on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import SingularDesignError

__all__ = [
    "FitResult",
    "MspeEstimate",
    "VarianceEstimate",
    "wls_beta",
    "fh_objective",
    "fh_estimate",
    "pr_estimate",
    "fh_estimate_many",
    "pr_estimate_many",
    "wls_beta_many",
    "eblup",
    "fit_model",
    "mspe",
    "leverage",
]

DEFAULT_FLOOR = 0.01
DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 100

ESTIMATORS = ("FH", "PR")


@dataclass(frozen=True)
class VarianceEstimate:
    """Variance-component fit: the estimate, truncation flag, diagnostics.

    ``A_raw`` is the pre-truncation value (PR only; the FH scoring path has
    no meaningful negative value, so it mirrors ``A_hat``).  ``f_abs`` is
    |f(A_hat)| for FH, NaN for PR.
    """

    A_hat: float
    was_truncated: bool
    method: str
    A_raw: float = float("nan")
    f_abs: float = float("nan")
    n_iter: int = 0


@dataclass(frozen=True)
class FitResult:
    """Complete model fit: regression, variance component, and predictors."""

    beta_hat: np.ndarray
    A_hat: float
    method: str
    was_truncated: bool
    eblup: np.ndarray
    B_hat: np.ndarray
    g1_hat: np.ndarray

    def synthetic(self, X: np.ndarray) -> np.ndarray:
        """Regression-synthetic estimates x_i' beta_hat."""
        return np.asarray(X, float) @ self.beta_hat


@dataclass(frozen=True)
class MspeEstimate:
    """Second-order MSPE estimate per area."""

    mspe: np.ndarray
    flavor: str  # "PrasadRao" or "DattaRaoSmith"


def _check_design(X: np.ndarray) -> np.ndarray:
    X = np.atleast_2d(np.asarray(X, float))
    m, p = X.shape
    if m <= p:
        raise SingularDesignError(f"need m > p, got m={m}, p={p}")
    if np.linalg.matrix_rank(X) < p:
        raise SingularDesignError("design matrix is rank deficient")
    return X


def wls_beta(X: np.ndarray, Y: np.ndarray, A: float, D: np.ndarray) -> np.ndarray:
    """Weighted least squares with weights 1/(A + D_i), via QR.

    Exact generalized least-squares solution for known A; no explicit matrix
    inverse is formed.
    """
    X = _check_design(X)
    Y = np.ravel(np.asarray(Y, float))
    D = np.ravel(np.asarray(D, float))
    if A < 0:
        raise ValueError(f"A must be >= 0, got {A}")
    if np.any(D <= 0):
        raise ValueError("all D_i must be > 0")
    w = 1.0 / (A + D)
    sw = np.sqrt(w)
    beta, _, rank, _ = np.linalg.lstsq(X * sw[:, None], Y * sw, rcond=None)
    if rank < X.shape[1]:
        raise SingularDesignError("weighted design is rank deficient")
    return beta


def wls_beta_many(X: np.ndarray, Y: np.ndarray, A: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Batched WLS: Y is (B, m), A is (B,); returns (B, p) coefficients."""
    w = 1.0 / (A[:, None] + D[None, :])
    if X.shape[1] == 1:
        wx = w * X[:, 0]
        return ((wx * Y).sum(axis=1) / (wx @ X[:, 0]))[:, None]
    XtWX = np.einsum("mi,bm,mj->bij", X, w, X, optimize=True)
    XtWy = np.einsum("mi,bm,bm->bi", X, w, Y, optimize=True)
    return np.linalg.solve(XtWX, XtWy[..., None])[..., 0]


def _f_and_trP(X, Y, A, D):
    """Batched moment-equation value f(A) and expected slope tr(P(A)).

    Y (B, m); A (B,).  Returns (f, trP, beta) each batched.
    """
    m, p = X.shape
    w = 1.0 / (A[:, None] + D[None, :])
    if p == 1:
        # Scalar normal equations; this is the hot path of the nested
        # bootstrap, so stick to single-pass einsum reductions.
        x = X[:, 0]
        wx = w if np.all(x == 1.0) else w * x
        XtWX = wx @ x
        beta = np.einsum("bm,bm->b", wx, Y) / XtWX
        resid = Y - beta[:, None] * x
        f = np.einsum("bm,bm,bm->b", resid, resid, w) - (m - 1)
        trP = w.sum(axis=1) - np.einsum("bm,bm->b", wx, wx) / XtWX
        return f, trP, beta[:, None]
    XtWX = np.einsum("mi,bm,mj->bij", X, w, X, optimize=True)
    XtWy = np.einsum("mi,bm,bm->bi", X, w, Y, optimize=True)
    beta = np.linalg.solve(XtWX, XtWy[..., None])[..., 0]
    resid = Y - beta @ X.T
    f = np.einsum("bm,bm->b", resid * resid, w) - (m - p)
    # tr(P) = tr(S^-1) - tr((X'S^-1X)^-1 X'S^-2X)
    XtW2X = np.einsum("mi,bm,mj->bij", X, w * w, X, optimize=True)
    inner = np.linalg.solve(XtWX, XtW2X)
    trP = w.sum(axis=1) - np.trace(inner, axis1=1, axis2=2)
    return f, trP, beta


def fh_objective(A: float, X: np.ndarray, Y: np.ndarray, D: np.ndarray) -> float:
    """Moment-equation value f(A) for a single dataset."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.ravel(np.asarray(Y, float))[None, :]
    D = np.ravel(np.asarray(D, float))
    f, _, _ = _f_and_trP(X, Y, np.array([float(A)]), D)
    return float(f[0])


def fh_estimate_many(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    floor: float = DEFAULT_FLOOR,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> tuple[np.ndarray, np.ndarray]:
    """Batched scoring solve of the moment equation.

    Returns ``(A_hat, was_truncated)`` with shapes (B,).  Rows with
    f(0) <= 0, no positive solution within ``max_iter``, or an interior root
    below ``floor`` are set to ``floor`` and flagged.
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    D = np.ravel(np.asarray(D, float))
    B = Y.shape[0]

    A = np.zeros(B)
    A_out = np.full(B, floor)
    truncated = np.ones(B, dtype=bool)

    f0, trP0, _ = _f_and_trP(X, Y, A, D)
    # f(0) <= 0: the equation has no positive root (f is decreasing).
    active = np.flatnonzero(f0 > 0.0)
    if active.size == 0:
        return A_out, truncated

    # Converge a bit past tol so downstream |f(A_hat)| <= tol holds under
    # round-off from alternate evaluation paths.
    tol_eff = 0.25 * tol
    A_act = f0[active] / trP0[active]  # first scoring step from A = 0
    Y_act = Y[active]
    idx = active
    for _ in range(max_iter):
        np.maximum(A_act, 0.0, out=A_act)
        f, trP, _ = _f_and_trP(X, Y_act, A_act, D)
        done = np.abs(f) <= tol_eff
        if done.any():
            sel = idx[done]
            A_out[sel] = np.maximum(A_act[done], 0.0)
            truncated[sel] = A_out[sel] < floor
            A_out[sel] = np.maximum(A_out[sel], floor)
            keep = ~done
            if not keep.any():
                break
            idx, A_act, Y_act, f, trP = idx[keep], A_act[keep], Y_act[keep], f[keep], trP[keep]
        A_act = A_act + f / trP
    # Rows still active after max_iter keep the floored/truncated default.
    return A_out, truncated


def fh_estimate(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    floor: float = DEFAULT_FLOOR,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> VarianceEstimate:
    """Scoring estimate of A for one dataset (see module docstring)."""
    X = _check_design(X)
    Y2 = np.ravel(np.asarray(Y, float))[None, :]
    D = np.ravel(np.asarray(D, float))
    A_hat, trunc = fh_estimate_many(X, Y2, D, floor=floor, tol=tol, max_iter=max_iter)
    a = float(A_hat[0])
    f_abs = abs(fh_objective(a, X, Y2[0], D))
    if not np.isfinite(f_abs):
        raise FloatingPointError("non-finite moment-equation value")
    return VarianceEstimate(
        A_hat=a, was_truncated=bool(trunc[0]), method="FH", A_raw=a, f_abs=f_abs
    )


def pr_estimate_many(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    floor: float = DEFAULT_FLOOR,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Batched method-of-moments estimate; returns (A_hat, was_truncated, A_raw)."""
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.atleast_2d(np.asarray(Y, float))
    D = np.ravel(np.asarray(D, float))
    m, p = X.shape
    Q, _ = np.linalg.qr(X)
    proj = Y @ Q
    rss = np.einsum("bm,bm->b", Y, Y) - np.einsum("bp,bp->b", proj, proj)
    penalty = D.sum() - np.einsum("mp,m,mp->", Q, D, Q)
    A_raw = (rss - penalty) / (m - p)
    truncated = A_raw < floor
    return np.maximum(A_raw, floor), truncated, A_raw


def pr_estimate(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    floor: float = DEFAULT_FLOOR,
) -> VarianceEstimate:
    """Method-of-moments estimate of A for one dataset."""
    X = _check_design(X)
    A_hat, trunc, A_raw = pr_estimate_many(X, np.ravel(np.asarray(Y, float))[None, :], D, floor)
    return VarianceEstimate(
        A_hat=float(A_hat[0]), was_truncated=bool(trunc[0]), method="PR", A_raw=float(A_raw[0])
    )


def eblup(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    beta_hat: np.ndarray,
    A_hat: float,
    method: str = "FH",
    was_truncated: bool = False,
) -> FitResult:
    """Empirical best linear predictor with plug-in (beta_hat, A_hat).

    theta_hat_i = (1 - B_i) y_i + B_i x_i' beta_hat with B_i = D_i/(A_hat + D_i);
    g1_hat_i = A_hat D_i / (A_hat + D_i).
    """
    X = np.atleast_2d(np.asarray(X, float))
    Y = np.ravel(np.asarray(Y, float))
    D = np.ravel(np.asarray(D, float))
    beta_hat = np.ravel(np.asarray(beta_hat, float))
    B = D / (A_hat + D)
    synth = X @ beta_hat
    theta = (1.0 - B) * Y + B * synth
    g1 = A_hat * D / (A_hat + D)
    return FitResult(
        beta_hat=beta_hat,
        A_hat=float(A_hat),
        method=method,
        was_truncated=was_truncated,
        eblup=theta,
        B_hat=B,
        g1_hat=g1,
    )


def fit_model(
    X: np.ndarray,
    Y: np.ndarray,
    D: np.ndarray,
    method: str = "FH",
    floor: float = DEFAULT_FLOOR,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> FitResult:
    """Fit the area-level model end to end with the chosen A-estimator."""
    method = method.upper()
    if method == "FH":
        var = fh_estimate(X, Y, D, floor=floor, tol=tol, max_iter=max_iter)
    elif method == "PR":
        var = pr_estimate(X, Y, D, floor=floor)
    else:
        raise ValueError(f"unknown estimator {method!r}; choose from {ESTIMATORS}")
    beta_hat = wls_beta(X, Y, var.A_hat, D)
    return eblup(X, Y, D, beta_hat, var.A_hat, method=method, was_truncated=var.was_truncated)


def mspe(fit: FitResult, X: np.ndarray, D: np.ndarray) -> MspeEstimate:
    """Second-order MSPE estimate g1 + g2 + 2 g3 per area.

    g2_i = B_i^2 x_i'(X'S^-1X)^-1 x_i covers regression-coefficient noise;
    g3_i = D_i^2 (A+D_i)^-3 Var(A_hat) covers variance-component noise, with
    Var(A_hat) = 2 sum_j (A+D_j)^2 / m^2 for PR and 2 / sum_j (A+D_j)^-2 for
    FH (scoring information).
    """
    X = np.atleast_2d(np.asarray(X, float))
    D = np.ravel(np.asarray(D, float))
    m = X.shape[0]
    A = fit.A_hat
    s = A + D
    w = 1.0 / s
    XtWX = (X * w[:, None]).T @ X
    # x_i' (X'S^-1X)^-1 x_i via a solve against all rows at once
    quad = np.einsum("mi,mi->m", X, np.linalg.solve(XtWX, X.T).T)
    g1 = fit.g1_hat
    g2 = fit.B_hat**2 * quad
    if fit.method == "PR":
        var_A = 2.0 * np.sum(s**2) / m**2
        flavor = "PrasadRao"
    else:
        var_A = 2.0 / np.sum(w**2)
        flavor = "DattaRaoSmith"
    g3 = D**2 / s**3 * var_A
    return MspeEstimate(mspe=g1 + g2 + 2.0 * g3, flavor=flavor)


def leverage(X: np.ndarray) -> np.ndarray:
    """OLS leverages h_ii = x_i'(X'X)^-1 x_i."""
    X = _check_design(X)
    Q, _ = np.linalg.qr(X)
    return np.einsum("mp,mp->m", Q, Q)
