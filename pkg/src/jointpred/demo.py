"""End-to-end height/weight walk-through.

Responses ``height`` and ``weight`` are modelled given ``age`` and ``male``:
a 444/100 seeded split, a forest + generator-network fit, predictive samples
for four covariate settings with joint tail probabilities, block predictions
for the whole test set, and ACvM/AMSE on the held-out rows.
"""

from __future__ import annotations

import csv
import json
import logging
import os
import urllib.request
from dataclasses import dataclass, replace
from importlib import resources
from pathlib import Path

import numpy as np

from . import defaults
from .data import Dataset, load_csv, split
from .evaluation import evaluate, write_plot_csv, write_report_csv
from .pipeline import FitConfig, batch_predict, fit_joint, joint_probability, predict_distribution, save_model, write_sample_csv

logger = logging.getLogger(__name__)

DATA_URL = "https://raw.githubusercontent.com/rmcelreath/rethinking/master/data/Howell1.csv"
DATA_FILE = "Howell1.csv"
CACHE_ENV = "JOINTPRED_CACHE_DIR"
FIXTURE = "height_weight_synthetic.csv"
RESPONSES = ("height", "weight")
COVARIATES = ("age", "male")

# (label, covariates, event) with 0-based response indices.
QUERIES = (
    ("age6_male", {"age": 6.0, "male": 1.0}, ((0, ">", 116.0), (1, "<", 21.0))),
    ("age10_female", {"age": 10.0, "male": 0.0}, ((0, ">", 116.0), (1, "<", 21.0))),
    ("age43_male", {"age": 43.0, "male": 1.0}, ((0, "<", 158.0), (1, ">", 46.0))),
    ("age67_female", {"age": 67.0, "male": 0.0}, ((0, "<", 158.0), (1, ">", 46.0))),
)
BLOCK_SIZES = (1, 2, 5)


class DataUnavailable(RuntimeError):
    pass


def fixture_path() -> Path:
    return Path(str(resources.files("jointpred").joinpath("datasets").joinpath(FIXTURE)))


def cache_dir() -> Path:
    return Path(os.environ.get(CACHE_ENV) or Path.home() / ".cache" / "jointpred")


def resolve_data(path: str | Path | None = None, offline: bool = False,
                 download: bool = True, timeout: float = 10.0) -> tuple[Path, str]:
    """Locate the height/weight table; returns ``(path, source)``.

    Order: explicit path, cached download, fresh download, bundled synthetic
    fixture (only when ``offline``).
    """
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise DataUnavailable(f"{p}: no such file")
        return p, "file"
    if offline:
        return fixture_path(), "fixture"
    cached = cache_dir() / DATA_FILE
    if cached.exists():
        return cached, "cache"
    if download:
        try:
            with urllib.request.urlopen(DATA_URL, timeout=timeout) as resp:
                payload = resp.read()
            cached.parent.mkdir(parents=True, exist_ok=True)
            cached.write_bytes(payload)
            return cached, "download"
        except OSError as exc:
            raise DataUnavailable(
                f"could not download {DATA_URL} ({exc}); place {DATA_FILE} in "
                f"${CACHE_ENV} or pass --data, or use --offline for the bundled synthetic table"
            ) from exc
    raise DataUnavailable(f"{DATA_FILE} not found in {cache_dir()}")


def load_height_weight(path: str | Path) -> Dataset:
    return load_csv(path, list(RESPONSES), list(COVARIATES))


@dataclass(frozen=True)
class DemoConfig:
    split_seed: int = defaults.SEED
    n_test: int = defaults.N_TEST
    n_gen: int = defaults.N_GEN
    n_rep: int = defaults.N_REP
    fit: FitConfig = FitConfig()


def binomial_se(p: float, n: int) -> float:
    return float(np.sqrt(p * (1.0 - p) / n))


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(x)) if isinstance(x, (float, np.floating)) else x for x in r])


def run_demo(data: Dataset, out_dir: str | Path | None = None, cfg: DemoConfig | None = None,
             evaluate_model: bool = True) -> dict:
    """Run the whole walk-through; write CSVs into ``out_dir`` when given.

    Returns a dict with the model, the split, the four query probabilities
    and the evaluation report.
    """
    cfg = cfg or DemoConfig()
    train, test = split(data, cfg.n_test, cfg.split_seed)
    model = fit_joint(train, "forest", "gmmn", cfg.fit)
    root = np.random.SeedSequence(cfg.fit.seed).spawn(3)
    query_ss, block_ss, eval_ss = root

    queries = []
    samples = []
    for (label, z, event), ss in zip(QUERIES, query_ss.spawn(len(QUERIES))):
        s = predict_distribution(model, z, cfg.n_gen, np.random.default_rng(ss))
        p = joint_probability(s, list(event))
        queries.append({"query": label, "age": z["age"], "male": z["male"],
                        "event": ",".join(f"{RESPONSES[j]}{op}{thr:g}" for j, op, thr in event),
                        "probability": p, "se": binomial_se(p, cfg.n_gen)})
        samples.append(s)

    blocks = {k: batch_predict(model, test.covariates, k, np.random.default_rng(ss))
              for k, ss in zip(BLOCK_SIZES, block_ss.spawn(len(BLOCK_SIZES)))}

    report = None
    if evaluate_model:
        report = evaluate(model, test, cfg.n_rep, cfg.n_gen, np.random.default_rng(eval_ss))

    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(model, out / "model.jpm")
        _write_rows(out / "test_data.csv", ("row", *COVARIATES, *RESPONSES),
                    [(k + 1, *test.covariates[k], *test.responses[k]) for k in range(test.n)])
        _write_rows(out / "probabilities.csv", ("query", "age", "male", "event", "probability", "se"),
                    [tuple(q.values()) for q in queries])
        for q, s in zip(queries, samples):
            write_sample_csv(s, out / f"prediction_{q['query']}.csv", {"query": q["query"]})
        for k, b in blocks.items():
            write_sample_csv(b, out / f"test_predictions_{k}_each.csv", {"n_gen_each": k})
        _write_rows(out / "training_loss.csv", ("epoch", "loss"),
                    [(i + 1, v) for i, v in enumerate(model.network.training_log)])
        if report is not None:
            write_report_csv([report], out / "evaluation.csv")
            write_plot_csv([report], out / "evaluation_plot.csv")
        (out / "summary.json").write_text(json.dumps({
            "n_trn": train.n,
            "n_tst": test.n,
            "model_id": model.model_id,
            "best_epoch": model.network.best_epoch,
            "queries": queries,
            "acvm": None if report is None else report.acvm,
            "amse": None if report is None else report.amse,
        }, indent=1, sort_keys=True) + "\n")

    return {"model": model, "train": train, "test": test, "queries": queries,
            "samples": samples, "blocks": blocks, "report": report}


def with_fit_seed(cfg: DemoConfig, seed: int) -> DemoConfig:
    """Same split, different model seed."""
    return replace(cfg, fit=replace(cfg.fit, seed=seed))
