"""Joint models: marginal regressions plus a dependence model for the residual copula.

Forest path::

    U_hat[k, j] = F_j(X[k, j] - theta_j(z_k))          # de-margin
    X_new[i, j] = F_j^{-1}(U[i, j]) + theta_j(z)       # re-margin

where ``theta_j`` is a random forest and ``F_j`` the empirical distribution of
its out-of-bag residuals.  GLM path: ``F_j(.; z)`` is a fitted gamma GLM.
The dependence model is a generator network or a parametric copula fit to
``U_hat``.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import warnings
from dataclasses import asdict, dataclass, field, replace
from functools import cached_property
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from . import _blob, defaults
from .copulas import CopulaModel, copula_from_record, copula_to_record, fit_copula, sample_copula
from .data import Dataset, EmpiricalMargin, fit_empirical_margin, margin_quantile, pseudo_observations
from .forest import ForestConfig, ForestModel, RegressionTree, fit_forest, oob_residuals
from .glm import GammaGlmModel, GlmError, fit_gamma_glm, glm_cdf, glm_quantile
from . import gmmn

logger = logging.getLogger(__name__)

FORMAT = "jointpred-model"
FORMAT_VERSION = 1

MARGINAL_KINDS = ("forest", "glm")
# Command-line spellings -> internal names.
DEPENDENCE_ALIASES = {
    "gmmn": "gmmn",
    "gaussian": "gaussian",
    "normal": "gaussian",
    "t": "student_t",
    "student_t": "student_t",
    "clayton": "clayton",
    "gumbel": "gumbel",
    "frank": "frank",
    "empirical-beta": "empirical_beta",
    "empirical_beta": "empirical_beta",
    "empirical": "empirical",
    "independence": "independence",
}
_GLM_EPS = 1e-12


class SchemaError(ValueError):
    """Covariate input that does not match the model's training schema."""


class ProvenanceError(RuntimeError):
    """Dependence model was not fit on this model's own pseudo-observations."""


@dataclass(frozen=True)
class FitConfig:
    n_trees: int = defaults.N_TREES
    mtry: int | None = defaults.MTRY
    min_node_size: int = defaults.MIN_NODE_SIZE
    architecture: str = defaults.ARCHITECTURE
    epochs: int = defaults.EPOCHS
    batch_size: int | None = defaults.BATCH_SIZE
    learning_rate: float = defaults.LEARNING_RATE
    dropout_rate: float = defaults.DROPOUT
    batch_norm: bool = defaults.BATCH_NORM
    bandwidths: tuple[float, ...] = defaults.BANDWIDTHS
    post_pobs: bool = defaults.POST_POBS
    seed: int = defaults.SEED
    n_jobs: int = 1

    def to_dict(self) -> dict:
        out = asdict(self)
        out["bandwidths"] = list(self.bandwidths)
        out.pop("n_jobs")
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "FitConfig":
        d = dict(d)
        d["bandwidths"] = tuple(d.get("bandwidths", defaults.BANDWIDTHS))
        return cls(**d)


def _substream_seeds(seed: int, d: int) -> dict[str, list[int]]:
    state = np.random.SeedSequence(seed).generate_state(d + 2)
    return {"forest": [int(s) for s in state[:d]], "net": [int(state[d]), int(state[d + 1])]}


def normalize_dependence(kind: str) -> str:
    try:
        return DEPENDENCE_ALIASES[kind]
    except KeyError:
        raise ValueError(
            f"unknown dependence model {kind!r}; choose from {sorted(DEPENDENCE_ALIASES)}"
        ) from None


def _hash_matrix(U: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(U, dtype=float).tobytes()).hexdigest()


@dataclass(eq=False)
class JointModel:
    marginal_kind: str
    dependence_kind: str
    response_names: tuple[str, ...]
    covariate_names: tuple[str, ...]
    categorical_flags: tuple[bool, ...]
    encodings: dict[str, dict[str, int]]
    config: FitConfig
    U_hat: np.ndarray
    forests: tuple[ForestModel, ...] = ()
    margins: tuple[EmpiricalMargin, ...] = ()
    glms: tuple[GammaGlmModel, ...] = ()
    network: gmmn.GeneratorNetwork | None = None
    copula: CopulaModel | None = None
    dependence_source: str = ""
    n_trn: int = 0

    @property
    def d(self) -> int:
        return len(self.response_names)

    @property
    def p(self) -> int:
        return len(self.covariate_names)

    @property
    def label(self) -> str:
        if self.network is not None:
            dep = self.network.architecture.label
        else:
            dep = self.dependence_kind
        return f"{self.marginal_kind}+{dep}"

    @cached_property
    def model_id(self) -> str:
        meta, arrays = _to_record(self)
        return _blob.digest(meta, arrays)[:16]

    def check_provenance(self) -> None:
        if _hash_matrix(self.U_hat) != self.dependence_source:
            raise ProvenanceError("dependence model was fit on different pseudo-observations")


@dataclass(frozen=True)
class PredictiveSample:
    draws: np.ndarray
    covariate: np.ndarray
    model_id: str
    seed: int | None = None
    response_names: tuple[str, ...] = ()

    @property
    def n_gen(self) -> int:
        return self.draws.shape[0]


# -- fitting -----------------------------------------------------------------

def _fit_margins(train: Dataset, marginal_kind: str, cfg: FitConfig):
    Z, X = train.covariates, train.responses
    seeds = _substream_seeds(cfg.seed, train.d)
    if marginal_kind == "forest":
        forests, margins, R = [], [], np.empty_like(X)
        for j in range(train.d):
            fc = ForestConfig(n_trees=cfg.n_trees, mtry=cfg.mtry,
                              min_node_size=cfg.min_node_size, seed=seeds["forest"][j])
            f = fit_forest(Z, X[:, j], fc, n_jobs=cfg.n_jobs)
            R[:, j] = oob_residuals(f, X[:, j])
            forests.append(f)
            margins.append(fit_empirical_margin(R[:, j]))
        return {"forests": tuple(forests), "margins": tuple(margins)}, pseudo_observations(R)
    if marginal_kind == "glm":
        if np.any(X <= 0):
            raise GlmError("the gamma GLM path needs strictly positive responses")
        glms = tuple(fit_gamma_glm(Z, X[:, j]) for j in range(train.d))
        U = np.column_stack([glm_cdf(g, X[:, j], Z) for j, g in enumerate(glms)])
        return {"glms": glms}, np.clip(U, _GLM_EPS, 1 - _GLM_EPS)
    raise ValueError(f"unknown marginal model {marginal_kind!r}; choose forest or glm")


def _fit_dependence(U_hat: np.ndarray, kind: str, cfg: FitConfig):
    d = U_hat.shape[1]
    if d == 1 and kind != "independence":
        warnings.warn("one response: dependence model degenerates to independence")
        kind = "independence"
    if kind == "gmmn":
        seeds = _substream_seeds(cfg.seed, d)["net"]
        arch = gmmn.Architecture.from_notation(
            cfg.architecture, d, use_batch_norm=cfg.batch_norm, dropout_rate=cfg.dropout_rate
        )
        net = gmmn.GeneratorNetwork.initialize(arch, seeds[0])
        tc = gmmn.TrainConfig(epochs=cfg.epochs, batch_size=cfg.batch_size,
                              learning_rate=cfg.learning_rate, bandwidths=cfg.bandwidths,
                              seed=seeds[1])
        return kind, gmmn.train(net, U_hat, tc), None
    if kind == "empirical":
        return kind, None, fit_copula("empirical_beta", U_hat, smooth=False)
    return kind, None, fit_copula(kind, U_hat)


def fit_joint(train: Dataset, marginal_kind: str = "forest", dependence_kind: str = "gmmn",
              cfg: FitConfig | None = None) -> JointModel:
    """Fit marginal models, de-margin the training responses, fit the dependence model."""
    cfg = cfg or FitConfig()
    dependence_kind = normalize_dependence(dependence_kind)
    parts, U_hat = _fit_margins(train, marginal_kind, cfg)
    kind, net, cop = _fit_dependence(U_hat, dependence_kind, cfg)
    U_hat.setflags(write=False)
    return JointModel(
        marginal_kind=marginal_kind,
        dependence_kind=kind,
        response_names=train.response_names,
        covariate_names=train.covariate_names,
        categorical_flags=train.categorical_flags,
        encodings={k: dict(v) for k, v in train.encodings.items()},
        config=cfg,
        U_hat=U_hat,
        network=net,
        copula=cop,
        dependence_source=_hash_matrix(U_hat),
        n_trn=train.n,
        **parts,
    )


def with_dependence(model: JointModel, dependence_kind: str, cfg: FitConfig | None = None) -> JointModel:
    """Same margins, new dependence model fit on the stored pseudo-observations."""
    cfg = cfg or model.config
    kind, net, cop = _fit_dependence(model.U_hat, normalize_dependence(dependence_kind), cfg)
    return replace(model, dependence_kind=kind, network=net, copula=cop, config=cfg,
                   dependence_source=_hash_matrix(model.U_hat))


# -- prediction ----------------------------------------------------------------

def encode_covariates(model: JointModel, z) -> np.ndarray:
    """Turn a mapping ``{name: value}`` or a row of length ``p`` into a numeric row."""
    if isinstance(z, Mapping):
        names = set(z)
        expected = set(model.covariate_names)
        if names != expected:
            missing = sorted(expected - names)
            extra = sorted(names - expected)
            raise SchemaError(f"covariates do not match the model (missing {missing}, unexpected {extra})")
        row = []
        for name in model.covariate_names:
            value = z[name]
            table = model.encodings.get(name)
            if table is not None and isinstance(value, str) and value in table:
                row.append(float(table[value]))
                continue
            try:
                row.append(float(value))
            except (TypeError, ValueError):
                raise SchemaError(f"covariate {name!r}: cannot interpret {value!r}") from None
        return np.asarray(row)
    row = np.asarray(z, dtype=float)
    if row.ndim != 1 or row.shape[0] != model.p:
        raise SchemaError(f"expected a covariate row of length {model.p}, got shape {row.shape}")
    return row


def sample_dependence(model: JointModel, n: int, rng=None) -> np.ndarray:
    """``n`` draws from the fitted copula model on the unit cube."""
    rng = np.random.default_rng(rng)
    if model.network is not None:
        return gmmn.sample(model.network, n, post_pobs=model.config.post_pobs, rng=rng)
    return sample_copula(model.copula, n, rng)


def conditional_means(model: JointModel, Z) -> np.ndarray:
    """Forest estimates ``theta_j(z)`` for each row of ``Z`` (n x d)."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    return np.column_stack([f.predict(Z) for f in model.forests])


def remargin(model: JointModel, U, Z, means: np.ndarray | None = None) -> np.ndarray:
    """Map unit-cube draws to the response scale.

    ``Z`` is one covariate row (shared by all draws) or one row per draw.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    out = np.empty_like(U)
    if model.marginal_kind == "forest":
        mu = conditional_means(model, Z) if means is None else np.atleast_2d(means)
        for j, margin in enumerate(model.margins):
            out[:, j] = margin_quantile(margin, U[:, j]) + mu[:, j]
    else:
        Zb = np.broadcast_to(Z, (U.shape[0], Z.shape[1]))
        for j, g in enumerate(model.glms):
            out[:, j] = glm_quantile(g, U[:, j], Zb)
    return out


def demargin(model: JointModel, ds: Dataset) -> np.ndarray:
    """Pseudo-values of new observations under the training margins."""
    if ds.d != model.d or ds.p != model.p:
        raise SchemaError("dataset columns do not match the model")
    X, Z = ds.responses, ds.covariates
    if model.marginal_kind == "forest":
        mu = conditional_means(model, Z)
        return np.column_stack([m.cdf(X[:, j] - mu[:, j]) for j, m in enumerate(model.margins)])
    return np.column_stack([glm_cdf(g, X[:, j], Z) for j, g in enumerate(model.glms)])


def _seed_of(rng) -> int | None:
    return int(rng) if isinstance(rng, (int, np.integer)) else None


def predict_distribution(model: JointModel, z, n_gen: int = defaults.N_GEN, rng=None) -> PredictiveSample:
    """Empirical predictive distribution of the responses at covariate ``z``."""
    if n_gen < 1:
        raise ValueError("n_gen must be positive")
    row = encode_covariates(model, z)
    U = sample_dependence(model, n_gen, np.random.default_rng(rng))
    draws = remargin(model, U, row)
    return PredictiveSample(draws, row, model.model_id, _seed_of(rng), model.response_names)


def batch_predict(model: JointModel, Z, n_gen_each: int = defaults.N_GEN_EACH, rng=None,
                  shared: bool = True) -> list[PredictiveSample]:
    """Predictive samples for every row of ``Z``.

    With ``shared=True`` one batch of ``len(Z) * n_gen_each`` unit-cube draws
    is generated and cut into consecutive blocks, one per row.  Otherwise each
    row gets its own draws from a substream of ``rng``.
    """
    if n_gen_each < 1:
        raise ValueError("n_gen_each must be positive")
    rows = [encode_covariates(model, z) for z in (Z if isinstance(Z, list) else np.atleast_2d(Z))]
    seed = _seed_of(rng)
    gen = np.random.default_rng(rng)
    k = len(rows)
    if shared:
        U = sample_dependence(model, k * n_gen_each, gen)
        blocks = [U[i * n_gen_each:(i + 1) * n_gen_each] for i in range(k)]
    else:
        blocks = [sample_dependence(model, n_gen_each, g) for g in gen.spawn(k)]
    Zm = np.vstack(rows)
    means = conditional_means(model, Zm) if model.marginal_kind == "forest" else None
    out = []
    for i, (row, U) in enumerate(zip(rows, blocks)):
        draws = remargin(model, U, row, None if means is None else means[i])
        out.append(PredictiveSample(draws, row, model.model_id, seed, model.response_names))
    return out


def joint_probability(s: PredictiveSample, event: Sequence[tuple[int, str, float]]) -> float:
    """Fraction of draws satisfying every ``(dim, op, threshold)`` with op ``<`` or ``>``."""
    if not event:
        warnings.warn("empty event: probability is 1")
        return 1.0
    ok = np.ones(s.n_gen, dtype=bool)
    for dim, op, thr in event:
        if not 0 <= dim < s.draws.shape[1]:
            raise ValueError(f"dimension {dim} out of range")
        col = s.draws[:, dim]
        if op == "<":
            ok &= col < thr
        elif op == ">":
            ok &= col > thr
        else:
            raise ValueError(f"unsupported operator {op!r}")
    return float(ok.mean())


def write_sample_csv(samples: PredictiveSample | list[PredictiveSample], path: str | Path,
                     meta: dict | None = None) -> None:
    """Draws as CSV (``dim_1, ..., dim_d``; a leading ``block`` column for batches)
    plus a JSON sidecar ``<path>.meta.json``."""
    path = Path(path)
    batch = isinstance(samples, list)
    items = samples if batch else [samples]
    d = items[0].draws.shape[1]
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow((["block"] if batch else []) + [f"dim_{j + 1}" for j in range(d)])
        for b, s in enumerate(items, start=1):
            for row in s.draws:
                w.writerow(([b] if batch else []) + [repr(float(x)) for x in row])
    side = {
        "model_id": items[0].model_id,
        "seed": items[0].seed,
        "responses": list(items[0].response_names),
        "n_gen": [s.n_gen for s in items] if batch else items[0].n_gen,
        "z": [s.covariate.tolist() for s in items] if batch else items[0].covariate.tolist(),
    }
    side.update(meta or {})
    Path(f"{path}.meta.json").write_text(json.dumps(side, indent=1, sort_keys=True) + "\n")


# -- serialization ---------------------------------------------------------------

def _to_record(m: JointModel) -> tuple[dict, dict[str, np.ndarray]]:
    meta = {
        "format": FORMAT,
        "version": FORMAT_VERSION,
        "marginal_kind": m.marginal_kind,
        "dependence_kind": m.dependence_kind,
        "response_names": list(m.response_names),
        "covariate_names": list(m.covariate_names),
        "categorical_flags": list(m.categorical_flags),
        "encodings": m.encodings,
        "config": m.config.to_dict(),
        "dependence_source": m.dependence_source,
        "n_trn": m.n_trn,
        "forests": [],
        "glms": [],
    }
    arrays: dict[str, np.ndarray] = {"U_hat": np.asarray(m.U_hat)}
    for j, f in enumerate(m.forests):
        meta["forests"].append({"mtry": f.mtry, "min_node_size": f.min_node_size,
                                "seed": f.seed, "n_features": f.n_features})
        key = f"forest/{j}/"
        for name in ("feature", "threshold", "left", "right", "value", "count"):
            arrays[key + name] = np.concatenate([getattr(t, name) for t in f.trees])
        arrays[key + "sizes"] = np.array([t.n_nodes for t in f.trees], dtype=np.int64)
        arrays[key + "bootstrap"] = np.stack([t.bootstrap_indices for t in f.trees])
        arrays[key + "oob"] = f.oob_predictions
        arrays[key + "in_sample"] = f.in_sample_predictions
    for j, margin in enumerate(m.margins):
        arrays[f"margin/{j}"] = margin.sorted_residuals
    for j, g in enumerate(m.glms):
        meta["glms"].append({"alpha": g.alpha, "n_iter": g.n_iter})
        arrays[f"glm/{j}/beta"] = g.beta
        arrays[f"glm/{j}/deviance"] = np.asarray(g.deviance_trace, dtype=float)
    if m.network is not None:
        meta["network"] = m.network.meta()
        arrays.update({f"net/{k}": v for k, v in m.network.to_arrays().items()})
    if m.copula is not None:
        cmeta, carrays = copula_to_record(m.copula)
        meta["copula"] = cmeta
        arrays.update({f"copula/{k}": v for k, v in carrays.items()})
    return meta, arrays


def save_model(m: JointModel, path: str | Path) -> None:
    meta, arrays = _to_record(m)
    meta["model_id"] = _blob.digest(meta, arrays)[:16]
    _blob.write(path, meta, arrays)


def load_model(path: str | Path) -> JointModel:
    meta, arrays = _blob.read(path)
    if meta.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if meta.get("version") != FORMAT_VERSION:
        raise ValueError(f"{path}: unsupported format version {meta.get('version')}")
    stored_id = meta.pop("model_id", None)
    forests = []
    for j, fm in enumerate(meta["forests"]):
        key = f"forest/{j}/"
        sizes = arrays[key + "sizes"]
        bounds = np.concatenate([[0], np.cumsum(sizes)])
        boots = arrays[key + "bootstrap"]
        trees = tuple(
            RegressionTree(
                **{name: arrays[key + name][bounds[t]:bounds[t + 1]]
                   for name in ("feature", "threshold", "left", "right", "value", "count")},
                bootstrap_indices=boots[t],
            )
            for t in range(sizes.shape[0])
        )
        forests.append(ForestModel(trees=trees, mtry=fm["mtry"], min_node_size=fm["min_node_size"],
                                   seed=fm["seed"], n_features=fm["n_features"],
                                   oob_predictions=arrays[key + "oob"],
                                   in_sample_predictions=arrays[key + "in_sample"]))
    d = len(meta["response_names"])
    margins = tuple(EmpiricalMargin(arrays[f"margin/{j}"]) for j in range(d)) if forests else ()
    glms = tuple(
        GammaGlmModel(beta=arrays[f"glm/{j}/beta"], alpha=g["alpha"], n_iter=g["n_iter"],
                      deviance_trace=tuple(arrays[f"glm/{j}/deviance"].tolist()))
        for j, g in enumerate(meta["glms"])
    )
    network = None
    if "network" in meta:
        net_arrays = {k[len("net/"):]: v for k, v in arrays.items() if k.startswith("net/")}
        network = gmmn.GeneratorNetwork.from_arrays(meta["network"], net_arrays)
    copula = None
    if "copula" in meta:
        cop_arrays = {k[len("copula/"):]: v for k, v in arrays.items() if k.startswith("copula/")}
        copula = copula_from_record(meta["copula"], cop_arrays)
    U_hat = arrays["U_hat"]
    U_hat.setflags(write=False)
    model = JointModel(
        marginal_kind=meta["marginal_kind"],
        dependence_kind=meta["dependence_kind"],
        response_names=tuple(meta["response_names"]),
        covariate_names=tuple(meta["covariate_names"]),
        categorical_flags=tuple(meta["categorical_flags"]),
        encodings=meta["encodings"],
        config=FitConfig.from_dict(meta["config"]),
        U_hat=U_hat,
        forests=tuple(forests),
        margins=margins,
        glms=glms,
        network=network,
        copula=copula,
        dependence_source=meta["dependence_source"],
        n_trn=meta["n_trn"],
    )
    model.check_provenance()
    if stored_id is not None and model.model_id != stored_id:
        raise ValueError(f"{path}: content does not match its model id")
    return model
