"""Goodness-of-prediction measures and the copula-learning benchmark.

* ACvM: averaged two-sample Cramer-von Mises discrepancy between the
  empirical copula of de-margined test data and that of generated samples.
* AMSE: mean squared Euclidean error of predictive draws, averaged over test rows.
* One-sample CvM of generated points against a known copula.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import defaults, gmmn
from .copulas import CopulaModel, UnsupportedError, copula_cdf_with_se, pairwise_tau, sample_copula, tau_to_param
from .data import Dataset, pseudo_observations
from .pipeline import JointModel, conditional_means, demargin, remargin, sample_dependence

logger = logging.getLogger(__name__)

BENCH_FAMILIES = ("clayton", "t4")


@dataclass(frozen=True)
class EvalReport:
    label: str
    acvm: float
    amse: float
    n_rep: int
    n_gen: int
    n_tst: int
    acvm_replications: tuple[float, ...]
    seed: int | None = None

    def rows(self) -> list[tuple]:
        out = [("acvm", v, i + 1, self.seed) for i, v in enumerate(self.acvm_replications)]
        out.append(("acvm", self.acvm, "mean", self.seed))
        out.append(("amse", self.amse, "", self.seed))
        return out


def empirical_copula_value(U, u) -> np.ndarray | float:
    """Fraction of rows of ``U`` that are componentwise <= ``u`` (one point or many)."""
    U = np.atleast_2d(np.asarray(U, dtype=float))
    u = np.asarray(u, dtype=float)
    pts = np.atleast_2d(u)
    if pts.shape[1] != U.shape[1]:
        raise ValueError("evaluation points and sample have different dimensions")
    vals = np.all(U[None, :, :] <= pts[:, None, :], axis=2).mean(axis=1)
    return float(vals[0]) if u.ndim == 1 else vals


def _cross_term(A: np.ndarray, B: np.ndarray) -> float:
    """mean over pairs of prod_j (1 - max(A_kj, B_lj))."""
    acc = np.ones((A.shape[0], B.shape[0]))
    for j in range(A.shape[1]):
        acc *= 1.0 - np.maximum(A[:, j][:, None], B[:, j][None, :])
    return float(acc.mean())


def cvm_integral_two_sample(U1, U2) -> float:
    """Exact integral over the unit cube of the squared difference of two empirical copulas.

    Uses ``int_0^1 1(a <= t) 1(b <= t) dt = 1 - max(a, b)`` coordinatewise, so
    the cost is quadratic in the sample sizes and there is no quadrature error.
    """
    A = np.atleast_2d(np.asarray(U1, dtype=float))
    B = np.atleast_2d(np.asarray(U2, dtype=float))
    if A.shape[1] != B.shape[1]:
        raise ValueError(f"dimension mismatch: {A.shape[1]} vs {B.shape[1]}")
    val = _cross_term(A, A) - 2.0 * _cross_term(A, B) + _cross_term(B, B)
    return max(val, 0.0)


def _as_report_seed(rng) -> int | None:
    return int(rng) if isinstance(rng, (int, np.integer)) else None


def acvm_replications(model: JointModel, test: Dataset, n_rep: int = defaults.N_REP,
                      n_gen: int = defaults.N_GEN, rng=None) -> list[float]:
    """Per-replication values ``cvm / sqrt(1/n_tst + 1/n_gen)``.

    Test pseudo-values come from the training-fitted margins.  The prefactor
    is applied exactly as defined for ACvM, not the classical two-sample
    normalisation.
    """
    if test.n < 2:
        raise ValueError("need at least two test rows")
    if n_rep < 1 or n_gen < 1:
        raise ValueError("n_rep and n_gen must be positive")
    U_tst = demargin(model, test)
    scale = 1.0 / np.sqrt(1.0 / test.n + 1.0 / n_gen)
    streams = np.random.default_rng(rng).spawn(n_rep)
    return [scale * cvm_integral_two_sample(U_tst, sample_dependence(model, n_gen, g)) for g in streams]


def acvm(model: JointModel, test: Dataset, n_rep: int = defaults.N_REP,
         n_gen: int = defaults.N_GEN, rng=None) -> float:
    return float(np.mean(acvm_replications(model, test, n_rep, n_gen, rng)))


def amse(model: JointModel, test: Dataset, n_gen: int = defaults.N_GEN, rng=None) -> float:
    """(1/n_tst) sum_k (1/n_gen) sum_i ||X_hat_k^(i) - X_k||^2, one draw stream per test row."""
    if test.n < 1 or n_gen < 1:
        raise ValueError("need test rows and a positive n_gen")
    Z, X = test.covariates, test.responses
    means = conditional_means(model, Z) if model.marginal_kind == "forest" else None
    total = 0.0
    for k, g in enumerate(np.random.default_rng(rng).spawn(test.n)):
        U = sample_dependence(model, n_gen, g)
        draws = remargin(model, U, Z[k], None if means is None else means[k])
        total += float(np.mean(np.sum((draws - X[k]) ** 2, axis=1)))
    return total / test.n


def evaluate(model: JointModel, test: Dataset, n_rep: int = defaults.N_REP,
             n_gen: int = defaults.N_GEN, rng=None, label: str | None = None) -> EvalReport:
    seed = _as_report_seed(rng)
    acvm_stream, amse_stream = np.random.default_rng(rng).spawn(2)
    reps = acvm_replications(model, test, n_rep, n_gen, acvm_stream)
    return EvalReport(
        label=label or model.label,
        acvm=float(np.mean(reps)),
        amse=amse(model, test, n_gen, amse_stream),
        n_rep=n_rep,
        n_gen=n_gen,
        n_tst=test.n,
        acvm_replications=tuple(reps),
        seed=seed,
    )


# -- one-sample CvM ----------------------------------------------------------------

def cvm_one_sample_with_se(U_gen, truth: CopulaModel, rng=None, n_mc: int = 100_000) -> tuple[float, float]:
    """``sum_k (C_n(P_k) - C(P_k))**2`` over the pseudo-observations ``P`` of ``U_gen``.

    ``C_n`` is the empirical copula of ``P``.  When ``C`` is itself a Monte
    Carlo estimate the second value is a delta-method standard error that
    treats the per-point errors as independent; otherwise it is 0.
    """
    U = np.atleast_2d(np.asarray(U_gen, dtype=float))
    if U.shape[1] != truth.dim:
        raise ValueError("sample and copula have different dimensions")
    P = pseudo_observations(U)
    Cn = empirical_copula_value(P, P)
    C, se = copula_cdf_with_se(truth, P, rng=rng, n_mc=n_mc)
    diff = Cn - C
    return float(np.sum(diff**2)), float(np.sqrt(np.sum((2 * diff * se) ** 2)))


def cvm_one_sample(U_gen, truth: CopulaModel, rng=None, n_mc: int = 100_000) -> float:
    return cvm_one_sample_with_se(U_gen, truth, rng, n_mc)[0]


# -- benchmark -----------------------------------------------------------------

@dataclass(frozen=True)
class BenchmarkConfig:
    family: str = "clayton"
    dim: int = 2
    tau: float = defaults.BENCH_TAU
    n_trn: int = defaults.BENCH_N_TRN
    architectures: tuple[str, ...] = defaults.BENCH_ARCHITECTURES
    epochs: int = defaults.BENCH_EPOCHS
    batch_size: int | None = defaults.BENCH_BATCH_SIZE
    reps: int = defaults.BENCH_REPS
    n_gen: int = defaults.N_GEN
    seed: int = defaults.SEED
    n_mc: int = 100_000
    references: bool = False  # add untrained-network and independence rows

    def __post_init__(self):
        if self.family not in BENCH_FAMILIES:
            raise UnsupportedError(f"benchmark family must be one of {BENCH_FAMILIES}")
        if self.dim < 2:
            raise ValueError("benchmark dimension must be >= 2")
        if not 0 < self.tau < 1:
            raise ValueError("tau must lie in (0, 1) for both benchmark families")


def benchmark_truth(cfg: BenchmarkConfig) -> CopulaModel:
    if cfg.family == "clayton":
        return CopulaModel("clayton", cfg.dim, {"theta": tau_to_param("clayton", cfg.tau)})
    rho = tau_to_param("student_t", cfg.tau)
    P = np.full((cfg.dim, cfg.dim), rho)
    np.fill_diagonal(P, 1.0)
    return CopulaModel("student_t", cfg.dim, {"P": P, "nu": 4.0})


def _mean_tau(U: np.ndarray) -> float:
    T = pairwise_tau(U)
    return float(T[np.triu_indices(U.shape[1], 1)].mean())


def benchmark_copula_learning(cfg: BenchmarkConfig) -> list[dict]:
    """Train each architecture on one sample from the true copula, then score
    ``cfg.reps`` generated samples with the one-sample CvM statistic.

    Returns long-format rows ``{architecture, replication, cvm, se, tau}``.
    """
    truth = benchmark_truth(cfg)
    root = np.random.SeedSequence(cfg.seed)
    data_ss, cdf_ss, *arch_ss = root.spawn(2 + len(cfg.architectures) + 1)
    U_trn = sample_copula(truth, cfg.n_trn, np.random.default_rng(data_ss))
    cdf_rng = np.random.default_rng(cdf_ss)
    rows: list[dict] = []

    def score(label: str, draw):
        for b in range(cfg.reps):
            U = draw(b)
            val, se = cvm_one_sample_with_se(U, truth, rng=cdf_rng, n_mc=cfg.n_mc)
            rows.append({"architecture": label, "replication": b + 1, "cvm": val,
                         "se": se, "tau": _mean_tau(U)})

    for notation, ss in zip(cfg.architectures, arch_ss):
        init_ss, train_ss, sample_ss = ss.spawn(3)
        arch = gmmn.Architecture.from_notation(notation, cfg.dim)
        net0 = gmmn.GeneratorNetwork.initialize(arch, np.random.default_rng(init_ss))
        tc = gmmn.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                              seed=int(train_ss.generate_state(1)[0]))
        net = gmmn.train(net0, U_trn, tc)
        streams = np.random.default_rng(sample_ss).spawn(cfg.reps)
        score(arch.label, lambda b, net=net, s=streams: gmmn.sample(net, cfg.n_gen, True, s[b]))
        if cfg.references:
            streams0 = np.random.default_rng(sample_ss).spawn(cfg.reps)
            score(f"untrained-{arch.label}",
                  lambda b, net=net0, s=streams0: gmmn.sample(net, cfg.n_gen, True, s[b]))
        logger.info("benchmark %s done", arch.label)
    if cfg.references:
        streams = np.random.default_rng(arch_ss[-1]).spawn(cfg.reps)
        score("independence", lambda b: streams[b].uniform(size=(cfg.n_gen, cfg.dim)))
    return rows


# -- CSV output -----------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_report_csv(reports: Sequence[EvalReport], path: str | Path) -> None:
    """Long format ``model, metric, value, replication, seed``."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "metric", "value", "replication", "seed"])
        for r in reports:
            for row in r.rows():
                w.writerow([r.label] + [_fmt(x) for x in row])


def write_plot_csv(reports: Sequence[EvalReport], path: str | Path) -> None:
    """One row per model with its ACvM and AMSE, for an AMSE-versus-ACvM scatter."""
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["model", "acvm", "amse", "n_rep", "n_gen", "n_tst"])
        for r in reports:
            w.writerow([r.label, _fmt(r.acvm), _fmt(r.amse), r.n_rep, r.n_gen, r.n_tst])


def write_benchmark_csv(rows: Sequence[dict], path: str | Path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["architecture", "replication", "cvm", "se", "tau"])
        for r in rows:
            w.writerow([_fmt(r[k]) for k in ("architecture", "replication", "cvm", "se", "tau")])
