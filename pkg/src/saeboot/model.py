"""Two-level area model: linking distributions and forward sampling.

The observation model is, for areas i = 1..m,

    level 1 (sampling):  y_i | theta_i ~ Normal(theta_i, D_i)
    level 2 (linking):   theta_i = x_i' beta + u_i,   u_i iid, mean 0, var A

where the standardized random effect u_i / sqrt(A) follows one of the
implemented families.  All families are centred and scaled so that a
standardized draw has mean 0 and variance exactly 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FAMILIES",
    "LinkingDistribution",
    "AreaLevelModel",
    "PopulationDraw",
    "linking",
    "standardized_draw",
    "excess_kurtosis",
    "skewness",
    "sample_population",
]

FAMILIES = ("normal", "student_t", "shifted_exponential", "logistic")

_ALIASES = {
    "normal": "normal",
    "gaussian": "normal",
    "t": "student_t",
    "student_t": "student_t",
    "studentt": "student_t",
    "se": "shifted_exponential",
    "shifted_exponential": "shifted_exponential",
    "shiftedexponential": "shifted_exponential",
    "logistic": "logistic",
}

# Standardization: logistic(0, 1) has variance pi^2 / 3.
_LOGISTIC_SCALE = np.sqrt(3.0) / np.pi


@dataclass(frozen=True)
class LinkingDistribution:
    """A mean/variance-standardized linking family.

    ``phi`` holds family-specific hyperparameters: the degrees of freedom for
    ``student_t`` (must exceed 4 so the fourth moment exists), nothing for the
    other families.  Hyperparameters are carried through bootstrap stages
    unchanged; they are never estimated.
    """

    family: str = "normal"
    phi: float | None = None

    def __post_init__(self) -> None:
        fam = _ALIASES.get(str(self.family).lower())
        if fam is None:
            raise ValueError(f"unknown linking family {self.family!r}; choose from {FAMILIES}")
        object.__setattr__(self, "family", fam)
        if fam == "student_t":
            if self.phi is None or not np.isfinite(self.phi) or self.phi <= 4.0:
                raise ValueError(
                    "student_t linking requires degrees of freedom > 4 "
                    f"(fourth moment must exist), got phi={self.phi!r}"
                )
            object.__setattr__(self, "phi", float(self.phi))
        elif self.phi is not None:
            raise ValueError(f"family {fam!r} takes no hyperparameter, got phi={self.phi!r}")

    def standardized_draw(self, rng: np.random.Generator, size=None):
        """Draw from the family standardized to mean 0, variance 1."""
        if self.family == "normal":
            return rng.standard_normal(size)
        if self.family == "student_t":
            nu = self.phi
            return rng.standard_t(nu, size) * np.sqrt((nu - 2.0) / nu)
        if self.family == "shifted_exponential":
            return rng.exponential(1.0, size) - 1.0
        return rng.logistic(0.0, 1.0, size) * _LOGISTIC_SCALE

    def excess_kurtosis(self) -> float:
        """E(u^4)/A^2 - 3 of the random effect (scale free)."""
        if self.family == "normal":
            return 0.0
        if self.family == "student_t":
            return 6.0 / (self.phi - 4.0)
        if self.family == "shifted_exponential":
            return 6.0
        return 1.2

    def skewness(self) -> float:
        """Standardized third moment (0 for the symmetric families)."""
        return 2.0 if self.family == "shifted_exponential" else 0.0


def linking(family: str, phi: float | None = None) -> LinkingDistribution:
    """Build a :class:`LinkingDistribution`, accepting short aliases (t, se)."""
    return LinkingDistribution(family=family, phi=phi)


def standardized_draw(G: LinkingDistribution, rng: np.random.Generator, size=None):
    return G.standardized_draw(rng, size)


def excess_kurtosis(G: LinkingDistribution) -> float:
    return G.excess_kurtosis()


def skewness(G: LinkingDistribution) -> float:
    return G.skewness()


def _readonly(a: np.ndarray) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class AreaLevelModel:
    """Full parametrization of the two-level model.

    Invariants: m > p >= 1 with rank(X) = p; every D_i > 0 and finite;
    A >= 0 (A = 0 gives the degenerate linking theta_i = x_i' beta).
    """

    X: np.ndarray
    D: np.ndarray
    beta: np.ndarray
    A: float
    G: LinkingDistribution = field(default_factory=LinkingDistribution)

    def __post_init__(self) -> None:
        X = _readonly(np.atleast_2d(self.X))
        D = _readonly(np.ravel(self.D))
        beta = _readonly(np.ravel(self.beta))
        m, p = X.shape
        if p < 1 or m <= p:
            raise ValueError(f"need m > p >= 1, got m={m}, p={p}")
        if np.linalg.matrix_rank(X) < p:
            raise ValueError("design matrix is rank deficient")
        if D.shape != (m,):
            raise ValueError(f"D must have length m={m}, got {D.shape}")
        if not np.all(np.isfinite(D)) or np.any(D <= 0.0):
            raise ValueError("all sampling variances D_i must be finite and > 0")
        if beta.shape != (p,):
            raise ValueError(f"beta must have length p={p}, got {beta.shape}")
        if not np.isfinite(self.A) or self.A < 0.0:
            raise ValueError(f"A must be finite and >= 0, got {self.A}")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "D", D)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "A", float(self.A))

    @property
    def m(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def mean(self) -> np.ndarray:
        """x_i' beta for all areas."""
        return self.X @ self.beta

    def shrinkage(self) -> np.ndarray:
        """True shrinkage weights B_i = D_i / (A + D_i)."""
        return self.D / (self.A + self.D)


@dataclass(frozen=True)
class PopulationDraw:
    """One simulated population: true means and their direct estimates."""

    theta: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        if self.theta.shape != self.y.shape:
            raise ValueError("theta and y must have equal length")


def sample_population(model: AreaLevelModel, rng: np.random.Generator) -> PopulationDraw:
    """Draw (theta, y) from the model.

    theta_i = x_i' beta + sqrt(A) * u_i with u_i a standardized draw from G;
    y_i = theta_i + sqrt(D_i) * z_i with z_i standard normal.  All draws are
    independent across areas.
    """
    m = model.m
    u = model.G.standardized_draw(rng, m)
    theta = model.mean() + np.sqrt(model.A) * u
    y = theta + np.sqrt(model.D) * rng.standard_normal(m)
    return PopulationDraw(theta=theta, y=y)
