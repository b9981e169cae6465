"""Experiment configuration, replicated runs and result files."""
from __future__ import annotations

import csv
import json
import math
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
import yaml

from ..crossfit import EstimationReport, estimate_ddml, estimate_dml
from ..errors import InputError
from ..hsic import KernelSpec
from ..numcore import TrainConfig
from ..nuisance import NuisanceSpec
from ..synthgen import Dataset, DgpConfig, generate, load_csv
from ..trainer import AblationFlags, LossWeights
from .stats import error_metrics

__all__ = [
    "SCHEMA_VERSION",
    "DatasetSpec",
    "MethodSpec",
    "ExperimentConfig",
    "ResultCell",
    "ResultTable",
    "load_config",
    "build_dataset",
    "run_method",
    "run_experiment",
    "write_results",
    "read_replications",
]

SCHEMA_VERSION = 1


def _build(cls, block, where):
    """Instantiate a dataclass from a mapping, rejecting unknown keys."""
    block = dict(block or {})
    known = {f.name for f in fields(cls)}
    unknown = sorted(set(block) - known)
    if unknown:
        raise InputError(f"{where}: unknown keys {unknown}")
    for key, val in block.items():
        if isinstance(val, list):
            block[key] = tuple(val)
    return cls(**block)


@dataclass(frozen=True)
class DatasetSpec:
    """Either a synthetic generator setting or a CSV file.

    For CSV sources ``theta_true`` (if given) is the ground truth used for
    the error metrics.
    """

    source: str = "synthetic"
    name: str | None = None
    dgp: DgpConfig = DgpConfig()
    path: str | None = None
    treatment_col: str = "T"
    outcome_col: str = "Y"
    covariates: tuple | None = None
    treatment_kind: str = "auto"
    theta_true: float | None = None

    @classmethod
    def from_dict(cls, block: dict, where: str = "dataset") -> "DatasetSpec":
        block = dict(block or {})
        source = block.pop("source", "synthetic")
        if source == "synthetic":
            name = block.pop("name", None)
            block.pop("seed", None)  # replications own the seed
            return cls(source, name, _build(DgpConfig, block, where))
        if source == "csv":
            if "path" not in block:
                raise InputError(f"{where}: csv source needs a path")
            cov = block.get("covariates")
            spec = _build(cls, {**block, "source": "csv"}, where)
            return replace(spec, covariates=None if cov is None else tuple(cov))
        raise InputError(f"{where}: unknown source {source!r}")

    @property
    def label(self) -> str:
        if self.name:
            return self.name
        if self.source == "synthetic":
            return self.dgp.name
        return Path(self.path).stem


@dataclass(frozen=True)
class MethodSpec:
    name: str
    estimator: str = "ddml"
    nuisance: NuisanceSpec = NuisanceSpec()
    flags: AblationFlags = AblationFlags()

    @classmethod
    def from_dict(cls, block: dict, where: str = "method") -> "MethodSpec":
        block = dict(block)
        if "name" not in block:
            raise InputError(f"{where}: every method needs a name")
        estimator = block.get("estimator", "ddml")
        if estimator not in ("dml", "ddml"):
            raise InputError(f"{where}: estimator must be 'dml' or 'ddml', got {estimator!r}")
        unknown = sorted(set(block) - {"name", "estimator", "nuisance", "flags"})
        if unknown:
            raise InputError(f"{where}: unknown keys {unknown}")
        nuisance = _build(NuisanceSpec, block.get("nuisance"), f"{where}.nuisance")
        flags = _build(AblationFlags, block.get("flags"), f"{where}.flags")
        return cls(block["name"], estimator, nuisance, flags)


def _default_methods():
    return (
        MethodSpec("DML-MLP", "dml", NuisanceSpec(kind="mlp")),
        MethodSpec("DDML-MLP", "ddml", NuisanceSpec(kind="mlp")),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to reproduce a benchmark table.

    Replication ``r`` uses ``seeds[r]`` when ``seeds`` is given, otherwise
    ``seed + r``.  The same seed drives data generation, fold assignment
    and model initialisation, so every method sees identical data and folds.
    """

    datasets: tuple = (DatasetSpec(),)
    methods: tuple = field(default_factory=_default_methods)
    replications: int = 5
    seed: int = 0
    seeds: tuple | None = None
    k: int = 5
    loss: LossWeights = LossWeights()
    train: TrainConfig = TrainConfig()
    kernel: KernelSpec = KernelSpec()
    latent_dim: int | None = 8
    hidden: tuple = (32, 32)
    activation: str = "elu"
    detach_theta: bool = False
    workers: int = 1
    output_dir: str = "results"

    def __post_init__(self):
        if self.replications < 1:
            raise InputError("replications must be >= 1")
        if self.seeds is not None and len(self.seeds) != self.replications:
            raise InputError(f"got {len(self.seeds)} seeds for {self.replications} replications")
        if self.workers < 1:
            raise InputError("workers must be >= 1")
        if self.activation not in ("relu", "elu", "tanh"):
            raise InputError(f"unknown activation {self.activation!r}")
        if not self.hidden or any(h < 1 for h in self.hidden):
            raise InputError(f"hidden widths must be >= 1, got {self.hidden}")
        names = [m.name for m in self.methods]
        if len(set(names)) != len(names):
            raise InputError(f"method names must be unique, got {names}")
        if not self.methods or not self.datasets:
            raise InputError("need at least one dataset and one method")

    def replication_seeds(self) -> list:
        if self.seeds is not None:
            return [int(s) for s in self.seeds]
        return [self.seed + r for r in range(self.replications)]

    @classmethod
    def from_dict(cls, doc: dict) -> "ExperimentConfig":
        doc = dict(doc or {})
        version = doc.pop("schema_version", SCHEMA_VERSION)
        if version != SCHEMA_VERSION:
            raise InputError(f"unsupported config schema_version {version}")
        kwargs = {}
        if "dataset" in doc and "datasets" in doc:
            raise InputError("give either 'dataset' or 'datasets', not both")
        if "dataset" in doc:
            kwargs["datasets"] = (DatasetSpec.from_dict(doc.pop("dataset")),)
        if "datasets" in doc:
            kwargs["datasets"] = tuple(DatasetSpec.from_dict(b, f"datasets[{i}]")
                                       for i, b in enumerate(doc.pop("datasets")))
        if "methods" in doc:
            kwargs["methods"] = tuple(MethodSpec.from_dict(b, f"methods[{i}]")
                                      for i, b in enumerate(doc.pop("methods")))
        for key, cls_ in (("loss", LossWeights), ("train", TrainConfig), ("kernel", KernelSpec)):
            if key in doc:
                kwargs[key] = _build(cls_, doc.pop(key), key)
        output = doc.pop("output", None)
        if output is not None:
            if not isinstance(output, dict) or set(output) - {"dir"}:
                raise InputError("output: expected a mapping with key 'dir'")
            kwargs["output_dir"] = str(output.get("dir", "results"))
        if "seeds" in doc and doc["seeds"] is not None:
            doc["seeds"] = tuple(int(s) for s in doc["seeds"])
            doc.setdefault("replications", len(doc["seeds"]))
        if "hidden" in doc:
            doc["hidden"] = tuple(int(h) for h in doc["hidden"])
        allowed = {"replications", "seed", "seeds", "k", "latent_dim", "hidden", "activation",
                   "detach_theta", "workers"}
        unknown = sorted(set(doc) - allowed)
        if unknown:
            raise InputError(f"unknown config keys {unknown}")
        kwargs.update(doc)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        def plain(obj):
            if isinstance(obj, tuple):
                return [plain(v) for v in obj]
            if isinstance(obj, dict):
                return {k: plain(v) for k, v in obj.items()}
            return obj

        def dataset_dict(ds):
            if ds.source == "synthetic":
                dgp = asdict(ds.dgp)
                dgp.pop("seed")
                out = {"source": "synthetic", **dgp}
                if ds.name:
                    out["name"] = ds.name
                return out
            out = asdict(ds)
            out.pop("dgp")
            return plain(out)

        return {
            "schema_version": SCHEMA_VERSION,
            "datasets": [dataset_dict(ds) for ds in self.datasets],
            "methods": [{"name": m.name, "estimator": m.estimator,
                         "nuisance": plain(asdict(m.nuisance)), "flags": asdict(m.flags)}
                        for m in self.methods],
            "replications": self.replications,
            "seed": self.seed,
            "seeds": None if self.seeds is None else list(self.seeds),
            "k": self.k,
            "loss": asdict(self.loss),
            "train": asdict(self.train),
            "kernel": asdict(self.kernel),
            "latent_dim": self.latent_dim,
            "hidden": list(self.hidden),
            "activation": self.activation,
            "detach_theta": self.detach_theta,
            "workers": self.workers,
            "output": {"dir": self.output_dir},
        }


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        doc = yaml.safe_load(path.read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise InputError(f"{path}: not a valid config document ({exc})") from None
    if doc is not None and not isinstance(doc, dict):
        raise InputError(f"{path}: top level must be a mapping")
    return ExperimentConfig.from_dict(doc)


def build_dataset(spec: DatasetSpec, seed: int) -> tuple[Dataset, float | None]:
    """Materialise a dataset and its ground-truth effect (None if unknown)."""
    if spec.source == "synthetic":
        data = generate(replace(spec.dgp, seed=int(seed)))
        return data, float(data.truth.theta)
    data = load_csv(spec.path, spec.treatment_col, spec.outcome_col,
                    None if spec.covariates is None else list(spec.covariates), spec.treatment_kind)
    return data, spec.theta_true


def run_method(data: Dataset, method: MethodSpec, cfg: ExperimentConfig, seed: int,
               probes: bool = False) -> EstimationReport:
    if method.estimator == "dml":
        return estimate_dml(data, cfg.k, method.nuisance, seed, cfg.loss.delta, cfg.loss.eps_corr)
    return estimate_ddml(data, cfg.k, method.nuisance, cfg.loss, cfg.train, method.flags, seed,
                         cfg.kernel, cfg.detach_theta, cfg.latent_dim, probes=probes,
                         hidden=cfg.hidden, activation=cfg.activation)


def _replication(job):
    cfg, d_idx, m_idx, r_idx, seed, probes = job
    ds, method = cfg.datasets[d_idx], cfg.methods[m_idx]
    record = {"dataset": ds.label, "method": method.name, "replication": r_idx, "seed": seed,
              "theta_hat": None, "theta_true": None, "abs_error": None, "residual_corr": None,
              "wall_time": None, "error": None}
    started = time.perf_counter()
    try:
        data, truth = build_dataset(ds, seed)
        record["theta_true"] = truth
        report = run_method(data, method, cfg, seed, probes=probes)
        record["theta_hat"] = report.theta_hat
        record["residual_corr"] = report.diagnostics["residual_corr"]
        if "probes" in report.diagnostics:
            record["probes"] = report.diagnostics["probes"]
        if truth is not None:
            record["abs_error"] = abs(report.theta_hat - truth)
    except Exception as exc:  # recorded per cell; the table is still emitted
        record["error"] = f"{type(exc).__name__}: {exc}"
        record["traceback"] = traceback.format_exc(limit=5)
    record["wall_time"] = time.perf_counter() - started
    return record


@dataclass
class ResultCell:
    dataset: str
    method: str
    thetas: list
    truths: list
    runtime: float
    errors: list
    mae: float = math.nan
    rmse: float = math.nan
    std: float = math.nan

    @classmethod
    def from_records(cls, dataset, method, records) -> "ResultCell":
        ok = [r for r in records if r["error"] is None]
        thetas = [r["theta_hat"] for r in ok]
        truths = [r["theta_true"] for r in ok]
        cell = cls(dataset, method, thetas, truths, float(sum(r["wall_time"] for r in records)),
                   [r["error"] for r in records if r["error"] is not None])
        scored = [(t, s) for t, s in zip(thetas, truths) if s is not None]
        if scored:
            m = error_metrics([t for t, _ in scored], [s for _, s in scored])
            cell.mae, cell.rmse, cell.std = m["mae"], m["rmse"], m["std"]
        return cell


@dataclass
class ResultTable:
    cells: list
    records: list
    config: ExperimentConfig

    def cell(self, dataset: str, method: str) -> ResultCell:
        for c in self.cells:
            if c.dataset == dataset and c.method == method:
                return c
        raise KeyError((dataset, method))


def _jobs(cfg: ExperimentConfig, probes: bool):
    seeds = cfg.replication_seeds()
    for d_idx in range(len(cfg.datasets)):
        for m_idx in range(len(cfg.methods)):
            for r_idx, seed in enumerate(seeds):
                yield (cfg, d_idx, m_idx, r_idx, seed, probes)


def execute(cfg: ExperimentConfig, probes: bool = False, workers: int | None = None) -> list:
    """Run every (dataset, method, replication) job; records come back in job order."""
    jobs = list(_jobs(cfg, probes))
    workers = cfg.workers if workers is None else int(workers)
    if workers <= 1 or len(jobs) <= 1:
        return [_replication(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replication, jobs))


def run_experiment(cfg: ExperimentConfig, out_dir=None, workers: int | None = None,
                   probes: bool = False) -> ResultTable:
    """Run the configured table and write ``summary.csv`` and ``replications.json``.

    Pass ``out_dir=False`` to skip writing files.
    """
    records = execute(cfg, probes, workers)
    cells = []
    for ds in cfg.datasets:
        for m in cfg.methods:
            mine = [r for r in records if r["dataset"] == ds.label and r["method"] == m.name]
            cells.append(ResultCell.from_records(ds.label, m.name, mine))
    table = ResultTable(cells, records, cfg)
    if out_dir is not False:
        write_results(table, cfg.output_dir if out_dir is None else out_dir)
    return table


SUMMARY_COLUMNS = ["schema_version", "dataset", "method", "n_ok", "n_failed", "mae", "rmse",
                   "std", "mean_theta", "runtime_s", "errors"]


def write_results(table: ResultTable, out_dir) -> tuple[Path, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    summary = out / "summary.csv"
    with summary.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(SUMMARY_COLUMNS)
        for c in table.cells:
            mean_theta = float(np.mean(c.thetas)) if c.thetas else math.nan
            w.writerow([SCHEMA_VERSION, c.dataset, c.method, len(c.thetas), len(c.errors),
                        repr(c.mae), repr(c.rmse), repr(c.std), repr(mean_theta),
                        repr(c.runtime), " | ".join(c.errors)])
    detail = out / "replications.json"
    doc = {"schema_version": SCHEMA_VERSION, "config": table.config.to_dict(),
           "replications": table.records}
    detail.write_text(json.dumps(doc, indent=2, allow_nan=True), encoding="utf-8")
    return summary, detail


def read_replications(path) -> list:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise InputError(f"{path}: unsupported schema_version {doc.get('schema_version')}")
    return doc["replications"]
