"""Parametric and empirical copulas: Kendall-tau fitting, sampling, CDFs."""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special, stats

logger = logging.getLogger(__name__)

FAMILIES = ("gaussian", "student_t", "clayton", "gumbel", "frank", "empirical_beta", "independence")
ARCHIMEDEAN = ("clayton", "gumbel", "frank")
NU_GRID = tuple(range(2, 31))


class UnsupportedError(ValueError):
    """Family/dimension combination that an operation does not cover."""


@dataclass(frozen=True)
class CopulaModel:
    """A fitted dependence model.

    ``params`` holds ``P`` (correlation matrix) and ``nu`` for the elliptical
    families, ``theta`` for Archimedean ones, and ``U`` plus ``smooth`` for
    the empirical beta copula.
    """

    family: str
    dim: int
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise UnsupportedError(f"unknown copula family {self.family!r}")
        if self.dim < 1:
            raise ValueError("dimension must be positive")
        p = self.params
        if self.family in ("gaussian", "student_t"):
            P = np.asarray(p["P"], dtype=float)
            if P.shape != (self.dim, self.dim) or not np.allclose(P, P.T) or not np.allclose(np.diag(P), 1):
                raise ValueError("P must be a symmetric correlation matrix")
            if np.linalg.eigvalsh(P).min() <= 0:
                raise ValueError("P must be positive definite")
            if self.family == "student_t" and not p["nu"] > 0:
                raise ValueError("nu must be positive")
        elif self.family == "clayton" and not p["theta"] > 0:
            raise ValueError("Clayton theta must be > 0")
        elif self.family == "gumbel" and not p["theta"] >= 1:
            raise ValueError("Gumbel theta must be >= 1")
        elif self.family == "frank":
            if p["theta"] == 0:
                raise ValueError("Frank theta must be nonzero")
            if p["theta"] < 0 and self.dim > 2:
                raise UnsupportedError("negative Frank theta only in d = 2")


# -- Kendall's tau -------------------------------------------------------------

def kendall_tau(x, y) -> float:
    """Tie-adjusted sample Kendall's tau (tau-b)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.shape != y.shape or x.ndim != 1 or x.shape[0] < 2:
        raise ValueError("kendall_tau needs two equal-length vectors with n >= 2")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise ValueError("Kendall's tau is undefined for constant input")
    return float(stats.kendalltau(x, y).statistic)


def pairwise_tau(U) -> np.ndarray:
    U = np.asarray(U, dtype=float)
    d = U.shape[1]
    T = np.eye(d)
    for i, j in itertools.combinations(range(d), 2):
        T[i, j] = T[j, i] = kendall_tau(U[:, i], U[:, j])
    return T


def _debye1(theta: float) -> float:
    if theta == 0:
        return 1.0
    val, _ = integrate.quad(lambda t: t / np.expm1(t) if t != 0 else 1.0, 0.0, theta,
                            epsabs=1e-14, epsrel=1e-13)
    return val / theta


def tau_of_param(family: str, theta: float) -> float:
    """Kendall's tau implied by an Archimedean parameter or a correlation."""
    if family == "clayton":
        return theta / (theta + 2)
    if family == "gumbel":
        return 1 - 1 / theta
    if family == "frank":
        if theta == 0:
            return 0.0
        return 1 - 4 / theta * (1 - _debye1(theta))
    if family in ("gaussian", "student_t"):
        return 2 / np.pi * np.arcsin(theta)
    raise UnsupportedError(f"no tau mapping for {family!r}")


def tau_to_param(family: str, tau: float) -> float:
    """Invert Kendall's tau: Archimedean ``theta`` or elliptical pairwise ``rho``."""
    if not -1 < tau < 1:
        raise ValueError("tau must lie in (-1, 1)")
    if family == "clayton":
        if tau <= 0:
            raise ValueError("Clayton needs tau > 0")
        return 2 * tau / (1 - tau)
    if family == "gumbel":
        if tau <= 0:
            raise ValueError("Gumbel needs tau > 0")
        return 1 / (1 - tau)
    if family == "frank":
        if tau == 0:
            raise ValueError("Frank needs tau != 0")
        sign = 1.0 if tau > 0 else -1.0
        lo, hi = 0.0, 1.0
        while tau_of_param("frank", sign * hi) * sign < abs(tau):
            lo, hi = hi, 2 * hi
        while hi - lo > 1e-10 * max(1.0, hi):
            mid = 0.5 * (lo + hi)
            if tau_of_param("frank", sign * mid) * sign < abs(tau):
                lo = mid
            else:
                hi = mid
        return sign * 0.5 * (lo + hi)
    if family in ("gaussian", "student_t"):
        return math.sin(math.pi * tau / 2)
    raise UnsupportedError(f"no tau inversion for {family!r}")


# -- fitting ---------------------------------------------------------------------

def nearest_correlation(P, floor: float = 1e-8) -> np.ndarray:
    """Eigenvalue clipping followed by rescaling to a unit diagonal."""
    P = 0.5 * (np.asarray(P, dtype=float) + np.asarray(P, dtype=float).T)
    w, Q = np.linalg.eigh(P)
    if w.min() > floor:
        return P
    P = (Q * np.maximum(w, floor)) @ Q.T
    s = 1 / np.sqrt(np.diag(P))
    P = P * s[:, None] * s[None, :]
    np.fill_diagonal(P, 1.0)
    return 0.5 * (P + P.T)


def _t_copula_loglik(U: np.ndarray, P: np.ndarray, nu: float) -> float:
    X = stats.t.ppf(U, df=nu)
    joint = stats.multivariate_t(loc=np.zeros(P.shape[0]), shape=P, df=nu).logpdf(X)
    return float(np.sum(joint) - np.sum(stats.t.logpdf(X, df=nu)))


def fit_copula(family: str, U_hat, smooth: bool = True) -> CopulaModel:
    """Kendall-tau inversion fit on pseudo-observations.

    Archimedean families use the average pairwise tau; ``student_t`` picks
    ``nu`` from 2..30 by pseudo-likelihood at the tau-implied ``P``.
    """
    U = np.atleast_2d(np.asarray(U_hat, dtype=float))
    n, d = U.shape
    if family not in FAMILIES:
        raise UnsupportedError(f"unknown copula family {family!r}")
    if n < 10:
        raise ValueError("need at least 10 rows to fit a copula")
    if np.any((U <= 0) | (U >= 1)):
        raise ValueError("copula data must lie in (0, 1)")
    if family == "independence":
        return CopulaModel("independence", d)
    if family == "empirical_beta":
        return CopulaModel("empirical_beta", d, {"U": U.copy(), "smooth": bool(smooth)})
    if d < 2:
        raise ValueError(f"{family} copula needs d >= 2")
    T = pairwise_tau(U)
    if family in ("gaussian", "student_t"):
        P = nearest_correlation(np.sin(np.pi * T / 2))
        if family == "gaussian":
            return CopulaModel("gaussian", d, {"P": P})
        logliks = [_t_copula_loglik(U, P, nu) for nu in NU_GRID]
        nu = float(NU_GRID[int(np.argmax(logliks))])
        return CopulaModel("student_t", d, {"P": P, "nu": nu})
    tau = float(T[np.triu_indices(d, 1)].mean())
    try:
        theta = tau_to_param(family, tau)
    except ValueError as exc:
        raise ValueError(f"average tau {tau:.4f} is not attainable by {family}: {exc}") from exc
    if family == "frank" and theta < 0 and d > 2:
        raise ValueError(f"average tau {tau:.4f} < 0 is not attainable by Frank in d > 2")
    return CopulaModel(family, d, {"theta": theta})


# -- sampling --------------------------------------------------------------------

def _positive_stable(alpha: float, n: int, rng) -> np.ndarray:
    """Chambers-Mallows-Stuck draw with Laplace transform ``exp(-t**alpha)``."""
    if alpha == 1:
        return np.ones(n)
    U = rng.uniform(0, np.pi, n)
    E = rng.exponential(size=n)
    return (np.sin(alpha * U) / np.sin(U) ** (1 / alpha)) * (
        np.sin((1 - alpha) * U) / E
    ) ** ((1 - alpha) / alpha)


def _clip_open(U: np.ndarray) -> np.ndarray:
    tiny = np.finfo(float).tiny
    return np.clip(U, tiny, np.nextafter(1.0, 0.0))


def sample_copula(c: CopulaModel, n: int, rng=None) -> np.ndarray:
    if n < 1:
        raise ValueError("sample size must be positive")
    rng = np.random.default_rng(rng)
    d, p = c.dim, c.params
    if c.family == "independence":
        return rng.uniform(size=(n, d))
    if c.family in ("gaussian", "student_t"):
        L = np.linalg.cholesky(np.asarray(p["P"], dtype=float))
        Z = rng.standard_normal((n, d)) @ L.T
        if c.family == "gaussian":
            return _clip_open(stats.norm.cdf(Z))
        W = rng.chisquare(p["nu"], size=n)
        return _clip_open(stats.t.cdf(Z / np.sqrt(W / p["nu"])[:, None], df=p["nu"]))
    if c.family == "empirical_beta":
        U = np.asarray(p["U"])
        m = U.shape[0]
        ranks = stats.rankdata(U, axis=0)
        rows = rng.integers(0, m, size=n)
        r = ranks[rows]
        if not p.get("smooth", True):
            return r / (m + 1)
        return _clip_open(rng.beta(r, m + 1 - r))
    theta = float(p["theta"])
    E = rng.exponential(size=(n, d))
    if c.family == "clayton":
        W = rng.gamma(1 / theta, size=n)[:, None]
        return _clip_open((1 + E / W) ** (-1 / theta))
    if c.family == "gumbel":
        S = _positive_stable(1 / theta, n, rng)[:, None]
        return _clip_open(np.exp(-((E / S) ** (1 / theta))))
    if c.family == "frank":
        if theta > 0:
            V = rng.logseries(-np.expm1(-theta), size=n)[:, None]
            return _clip_open(-np.log1p(np.exp(-E / V) * np.expm1(-theta)) / theta)
        # d = 2 with negative dependence: conditional inversion.
        u1, w = rng.uniform(size=n), rng.uniform(size=n)
        num = w * np.expm1(-theta)
        den = w + (1 - w) * np.exp(-theta * u1)
        u2 = -np.log1p(num / den) / theta
        return _clip_open(np.column_stack([u1, u2]))
    raise UnsupportedError(c.family)


# -- CDFs ------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(200)
_GL_NODES = 0.5 * (_GL_NODES + 1.0)
_GL_WEIGHTS = 0.5 * _GL_WEIGHTS


def _bivariate_elliptical_cdf(u1, u2, rho: float, nu: float | None) -> np.ndarray:
    """``C(u1, u2)`` for the bivariate normal (``nu=None``) or t copula.

    Integrates the conditional CDF of the second coordinate over
    ``v in (0, u1)``; substituting ``v = u1 w**2`` removes the endpoint
    singularity so fixed Gauss-Legendre nodes suffice.
    """
    u1 = np.asarray(u1, dtype=float)[:, None]
    u2 = np.asarray(u2, dtype=float)[:, None]
    w = _GL_NODES[None, :]
    v = u1 * w * w
    if nu is None:
        s = special.ndtri(v)
        x2 = special.ndtri(u2)
        cond = special.ndtr((x2 - rho * s) / math.sqrt(1 - rho**2))
    else:
        s = special.stdtrit(nu, v)
        x2 = special.stdtrit(nu, u2)
        scale = np.sqrt((1 - rho**2) * (nu + s * s) / (nu + 1))
        cond = special.stdtr(nu + 1, (x2 - rho * s) / scale)
    vals = (cond * 2 * u1 * w) @ _GL_WEIGHTS
    return np.clip(vals, 0.0, np.minimum(u1, u2)[:, 0])


def copula_cdf(c: CopulaModel, u, rng=None, n_mc: int = 100_000) -> np.ndarray:
    """Copula CDF at the rows of ``u`` (a single point gives a 0-d array).

    Elliptical families are exact (quadrature) for ``d = 2`` and Monte Carlo
    for ``d > 2``; use :func:`copula_cdf_with_se` to get the Monte Carlo error.
    """
    return copula_cdf_with_se(c, u, rng=rng, n_mc=n_mc)[0]


def copula_cdf_with_se(c: CopulaModel, u, rng=None, n_mc: int = 100_000):
    u = np.asarray(u, dtype=float)
    single = u.ndim == 1
    u = np.atleast_2d(u)
    if u.shape[1] != c.dim:
        raise ValueError(f"points must have {c.dim} coordinates")
    if np.any((u < 0) | (u > 1)):
        raise ValueError("points must lie in [0, 1]^d")
    zero = np.any(u == 0, axis=1)
    se = np.zeros(u.shape[0])
    p = c.params
    with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
        if c.family == "independence":
            out = np.prod(u, axis=1)
        elif c.family == "clayton":
            th = p["theta"]
            out = np.maximum(np.sum(u ** (-th), axis=1) - c.dim + 1, 1.0) ** (-1 / th)
        elif c.family == "gumbel":
            th = p["theta"]
            out = np.exp(-np.sum((-np.log(u)) ** th, axis=1) ** (1 / th))
        elif c.family == "frank":
            th = p["theta"]
            num = np.prod(np.expm1(-th * u), axis=1)
            out = -np.log1p(num / np.expm1(-th) ** (c.dim - 1)) / th
        elif c.family in ("gaussian", "student_t"):
            nu = p.get("nu") if c.family == "student_t" else None
            if c.dim == 2:
                rho = float(p["P"][0, 1])
                safe = np.where((u == 0) | (u == 1), 0.5, u)
                out = _bivariate_elliptical_cdf(safe[:, 0], safe[:, 1], rho, nu)
                out = np.where(u[:, 0] == 1, u[:, 1], np.where(u[:, 1] == 1, u[:, 0], out))
            else:
                draws = sample_copula(c, n_mc, rng)
                out = np.empty(u.shape[0])
                for start in range(0, u.shape[0], 64):
                    block = u[start:start + 64]
                    hits = np.all(draws[None, :, :] <= block[:, None, :], axis=2)
                    out[start:start + 64] = hits.mean(axis=1)
                se = np.sqrt(out * (1 - out) / n_mc)
        else:
            raise UnsupportedError(f"no CDF for the {c.family} copula")
    out = np.where(zero, 0.0, np.clip(out, 0.0, 1.0))
    if single:
        return out[0], se[0]
    return out, se


def copula_to_record(c: CopulaModel) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {"family": c.family, "dim": c.dim}
    arrays = {}
    for k, v in c.params.items():
        if isinstance(v, np.ndarray):
            arrays[k] = v
        else:
            meta[k] = v
    return meta, arrays


def copula_from_record(meta: dict, arrays: dict[str, np.ndarray]) -> CopulaModel:
    params = {k: v for k, v in meta.items() if k not in ("family", "dim")}
    params.update({k: np.array(v) for k, v in arrays.items()})
    return CopulaModel(meta["family"], int(meta["dim"]), params)
