"""Replicated feature-selection experiments with one-at-a-time sweeps.

Every replication draws a fresh dataset, fits one model and evaluates the
requested GFA methods on the train and valid domains.  Results are folded in
replication order, so the report does not depend on execution order.

Seeds: replication ``r`` at sweep position ``s`` uses
``SeedSequence([base_seed, r, s]).generate_state(1, uint64)[0]`` for data
generation; permutation importance uses the same seed plus one.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np
from joblib import Parallel, delayed

from .attribution import total_gain, total_gain_via_inner
from .data import InvalidInputError, read_table
from .datagen import chip_pipeline, gen_additive, gen_simulated
from .gbt import STANDARD_PARAMS, TrainConfig, fit
from .gfa import FAMILIES, compute_gfa
from .metrics import auc, normalize_l1, normalize_l2, risk

logger = logging.getLogger(__name__)

SWEEP_VALUES = {
    "eta": [1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1e0],
    "max_depth": [2, 4, 6, 8, 10],
    "min_child_weight": [0.5, 1, 2, 4, 8],
    "num_boost_round": [200, 400, 600, 800, 1000],
    "reg_lambda": [0, 0.1, 1, 10, 100],
}

DEFAULT_METHODS = [
    {"family": fam, "ifa": ifa, "domain": dom}
    for fam in ("tree_inner", "forest_inner", "abs")
    for ifa in ("predecomp", "saabas_tilde")
    for dom in ("train", "valid")
] + [{"family": "permutation", "ifa": "none", "domain": dom} for dom in ("train", "valid")]

ROW_COLUMNS = [
    "dataset", "task", "family", "domain", "ifa", "sweep_name", "sweep_value",
    "auc_mean", "auc_std", "risk_mean", "risk_std",
    "noisy_score_mean", "relevant_score_mean", "identity_max_abs_diff", "n_replications",
]
RECORD_COLUMNS = [
    "sweep_index", "sweep_value", "replication", "seed", "family", "domain", "ifa",
    "auc", "risk", "noisy_score", "relevant_score", "identity_diff",
]


class ExperimentError(RuntimeError):
    def __init__(self, replication: int, cause: BaseException):
        super().__init__(f"replication {replication} failed: {cause!r}")
        self.replication = replication


@dataclass
class ExperimentConfig:
    """Experiment description; mirrors the JSON config file.

    ``dataset`` is ``{"kind": "simulated", "n_train": .., "n_valid": ..}``,
    ``{"kind": "chip", "path": .., "n_train": ..}`` or
    ``{"kind": "additive", "n_train": .., "n_valid": .., "components": [..]}``.
    ``sweep`` is ``{"name": <hyperparameter name>, "values": [..]}`` or None for the
    standard point only.  ``params`` overrides standard values of the
    hyperparameters not being swept.
    """

    dataset: dict = field(default_factory=lambda: {"kind": "simulated", "n_train": 1000, "n_valid": 1000})
    task: str = "regression"
    replications: int = 20
    sweep: Optional[dict] = None
    methods: list = field(default_factory=lambda: [dict(m) for m in DEFAULT_METHODS])
    base_seed: int = 0
    params: dict = field(default_factory=dict)
    n_repeats: int = 1
    n_jobs: Optional[int] = None

    def __post_init__(self):
        if self.task not in ("regression", "classification"):
            raise InvalidInputError(f"unknown task {self.task!r}")
        if int(self.replications) != self.replications or self.replications < 1:
            raise InvalidInputError("replications must be an integer >= 1")
        if self.dataset.get("kind") not in ("simulated", "chip", "additive"):
            raise InvalidInputError(f"unknown dataset kind {self.dataset.get('kind')!r}")
        for name in self.params:
            if name not in STANDARD_PARAMS:
                raise InvalidInputError(f"unknown hyperparameter {name!r}")
        if self.sweep is not None:
            name = self.sweep.get("name")
            if name not in STANDARD_PARAMS:
                raise InvalidInputError(f"sweep must vary one of {sorted(STANDARD_PARAMS)}, got {name!r}")
            values = self.sweep.get("values", SWEEP_VALUES[name])
            if not values:
                raise InvalidInputError("sweep needs at least one value")
            self.sweep = {"name": name, "values": list(values)}
        methods = []
        for m in self.methods:
            fam = m.get("family")
            if fam not in FAMILIES:
                raise InvalidInputError(f"unknown GFA family {fam!r}")
            ifa = "none" if fam == "permutation" else m.get("ifa", "predecomp")
            dom = m.get("domain", "valid")
            if dom not in ("train", "valid"):
                raise InvalidInputError(f"unknown domain {dom!r}")
            methods.append({"family": fam, "ifa": ifa, "domain": dom})
        self.methods = methods

    @property
    def loss(self) -> str:
        return "squared_error" if self.task == "regression" else "logistic"

    def sweep_points(self) -> list[tuple[str, Any]]:
        if self.sweep is None:
            return [("standard", None)]
        return [(self.sweep["name"], v) for v in self.sweep["values"]]

    def train_config(self, sweep_value=None) -> TrainConfig:
        params = dict(STANDARD_PARAMS)
        params.update(self.params)
        if self.sweep is not None:
            params[self.sweep["name"]] = sweep_value
        return TrainConfig(loss=self.loss, **params)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        path = Path(path)
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise InvalidInputError(f"{path}: malformed config JSON ({exc})") from None
        try:
            return cls.from_dict(doc)
        except TypeError as exc:
            raise InvalidInputError(f"{path}: {exc}") from None


@dataclass
class ExperimentReport:
    config: dict
    rows: list
    records: list

    def to_dict(self) -> dict:
        return {"config": self.config, "rows": self.rows, "records": self.records}

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentReport":
        return cls(d["config"], d["rows"], d["records"])


def replication_seed(base_seed: int, replication: int, sweep_index: int) -> int:
    return int(np.random.SeedSequence([int(base_seed), replication, sweep_index]).generate_state(1, np.uint64)[0])


def _make_data(config: ExperimentConfig, seed: int):
    spec = config.dataset
    kind = spec["kind"]
    if kind == "simulated":
        return gen_simulated(spec.get("n_train", 1000), spec.get("n_valid", 1000), config.task, seed)
    if kind == "chip":
        table, names = read_table(spec["path"])
        drop = spec.get("drop_columns", [])
        keep = [j for j, nm in enumerate(names) if nm not in drop]
        return chip_pipeline(table[:, keep], config.task, seed, spec.get("n_train"), [names[j] for j in keep])
    if config.task != "regression":
        raise InvalidInputError("additive datasets are regression-only")
    n_train = spec.get("n_train", 1000)
    data, truth = gen_additive(n_train + spec.get("n_valid", 1000), spec["components"], seed, spec.get("noise_sd", 0.0))
    return data.subset(slice(0, n_train)), data.subset(slice(n_train, None)), truth


def identity_diagnostic(model, train) -> float:
    """max_k |l1norm(total_gain)_k - l1norm(inner-product total gain)_k|."""
    _per_tree, forest = total_gain(model)
    via = total_gain_via_inner(model, train).sum(axis=0)
    if not np.any(forest) and not np.any(via):
        return 0.0
    return float(np.max(np.abs(normalize_l1(forest) - normalize_l1(via))))


def _mean_or_nan(v) -> float:
    return float(np.mean(v)) if len(v) else math.nan


def run_replication(config: ExperimentConfig, sweep_index: int, replication: int) -> list[dict]:
    name, value = config.sweep_points()[sweep_index]
    seed = replication_seed(config.base_seed, replication, sweep_index)
    train, valid, truth = _make_data(config, seed)
    model = fit(train, config.train_config(value))
    rel = truth.relevance()
    model_risk = risk(model, valid)
    ident = identity_diagnostic(model, train)
    out = []
    for method in config.methods:
        data = train if method["domain"] == "train" else valid
        kwargs = {"n_repeats": config.n_repeats, "seed": seed + 1} if method["family"] == "permutation" else {}
        result = compute_gfa(model, method["family"], data, method["domain"], method["ifa"], **kwargs)
        scores = result.scores
        normed = normalize_l2(scores) if np.any(scores) else scores
        try:
            a = auc(scores, rel)
        except ValueError:
            a = math.nan
        out.append(
            {
                "sweep_index": sweep_index,
                "sweep_value": value,
                "replication": replication,
                "seed": seed,
                **method,
                "auc": a,
                "risk": model_risk,
                "noisy_score": _mean_or_nan(normed[rel == 0]),
                "relevant_score": _mean_or_nan(normed[rel == 1]),
                "identity_diff": ident,
            }
        )
    if not config.methods:
        out.append(
            {
                "sweep_index": sweep_index, "sweep_value": value, "replication": replication, "seed": seed,
                "family": None, "domain": None, "ifa": None, "auc": math.nan, "risk": model_risk,
                "noisy_score": math.nan, "relevant_score": math.nan, "identity_diff": ident,
            }
        )
    return out


def _guarded(config, s, r):
    try:
        return run_replication(config, s, r)
    except Exception as exc:  # attach the replication index
        raise ExperimentError(r, exc) from exc


def _std(v) -> Optional[float]:
    v = [x for x in v if x is not None and not math.isnan(x)]
    return float(np.std(v, ddof=1)) if len(v) > 1 else None


def _mean(v) -> Optional[float]:
    v = [x for x in v if x is not None and not math.isnan(x)]
    return float(np.mean(v)) if v else None


def aggregate(config: ExperimentConfig, records: list[dict]) -> list[dict]:
    rows = []
    points = config.sweep_points()
    for s, (name, value) in enumerate(points):
        for method in config.methods:
            sel = [
                r for r in records
                if r["sweep_index"] == s and all(r[k] == method[k] for k in ("family", "domain", "ifa"))
            ]
            sel.sort(key=lambda r: r["replication"])
            rows.append(
                {
                    "dataset": config.dataset["kind"],
                    "task": config.task,
                    **method,
                    "sweep_name": name,
                    "sweep_value": value,
                    "auc_mean": _mean([r["auc"] for r in sel]),
                    "auc_std": _std([r["auc"] for r in sel]),
                    "risk_mean": _mean([r["risk"] for r in sel]),
                    "risk_std": _std([r["risk"] for r in sel]),
                    "noisy_score_mean": _mean([r["noisy_score"] for r in sel]),
                    "relevant_score_mean": _mean([r["relevant_score"] for r in sel]),
                    "identity_max_abs_diff": max(r["identity_diff"] for r in sel),
                    "n_replications": len(sel),
                }
            )
    return rows


def _jsonable(v):
    if isinstance(v, float) and math.isnan(v):
        return None
    if isinstance(v, np.generic):
        return v.item()
    return v


def run_experiment(config: ExperimentConfig, n_jobs: Optional[int] = None) -> ExperimentReport:
    """Run every (sweep point, replication) pair and aggregate."""
    n_jobs = n_jobs if n_jobs is not None else (config.n_jobs if config.n_jobs is not None else -1)
    tasks = [(s, r) for s in range(len(config.sweep_points())) for r in range(config.replications)]
    results = Parallel(n_jobs=n_jobs, backend="threading")(delayed(_guarded)(config, s, r) for s, r in tasks)
    records = [rec for batch in results for rec in batch]
    records.sort(key=lambda r: (r["sweep_index"], r["replication"]))
    rows = [{k: _jsonable(row[k]) for k in ROW_COLUMNS} for row in aggregate(config, records)]
    records = [{k: _jsonable(rec[k]) for k in RECORD_COLUMNS} for rec in records]
    return ExperimentReport(config.to_dict(), rows, records)


# output ------------------------------------------------------------------

SERIES = ("auc", "score_noisy", "score_relevant", "risk", "identity_error")


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: Path, columns, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def _stderr(std, n):
    return None if std is None or not n else std / math.sqrt(n)


def series(report: ExperimentReport) -> dict[str, tuple[list, list]]:
    """Plot-ready per-sweep-value series, one table per figure type."""
    rows = report.rows
    method_cols = ["sweep_name", "sweep_value", "family", "domain", "ifa", "mean", "std_error", "n"]
    out = {}
    for key, mean_col, std_col in (
        ("auc", "auc_mean", "auc_std"),
        ("score_noisy", "noisy_score_mean", None),
        ("score_relevant", "relevant_score_mean", None),
    ):
        table = [
            {
                "sweep_name": r["sweep_name"], "sweep_value": r["sweep_value"],
                "family": r["family"], "domain": r["domain"], "ifa": r["ifa"],
                "mean": r[mean_col],
                "std_error": _stderr(r[std_col], r["n_replications"]) if std_col else None,
                "n": r["n_replications"],
            }
            for r in rows
        ]
        out[key] = (method_cols, table)
    # score standard errors come from the replication records
    for key, col in (("score_noisy", "noisy_score"), ("score_relevant", "relevant_score")):
        for entry in out[key][1]:
            vals = [
                rec[col] for rec in report.records
                if rec["sweep_value"] == entry["sweep_value"]
                and all(rec[k] == entry[k] for k in ("family", "domain", "ifa"))
                and rec[col] is not None
            ]
            entry["std_error"] = _stderr(_std(vals), len(vals))

    points = []
    for rec in report.records:
        key = (rec["sweep_index"], rec["sweep_value"])
        if key not in points:
            points.append(key)
    risk_rows, ident_rows = [], []
    sweep_name = rows[0]["sweep_name"] if rows else (report.config.get("sweep") or {}).get("name", "standard")
    for s, value in points:
        recs = {}
        for rec in report.records:
            if rec["sweep_index"] == s:
                recs.setdefault(rec["replication"], rec)
        risks = [recs[r]["risk"] for r in sorted(recs)]
        idents = [recs[r]["identity_diff"] for r in sorted(recs)]
        risk_rows.append(
            {"sweep_name": sweep_name, "sweep_value": value, "mean": _mean(risks),
             "std_error": _stderr(_std(risks), len(risks)), "n": len(risks)}
        )
        worst = max(idents)
        ident_rows.append(
            {"sweep_name": sweep_name, "sweep_value": value, "max_abs_diff": worst,
             "log10_max_abs_diff": math.log10(worst) if worst > 0 else None, "n": len(idents)}
        )
    out["risk"] = (["sweep_name", "sweep_value", "mean", "std_error", "n"], risk_rows)
    out["identity_error"] = (["sweep_name", "sweep_value", "max_abs_diff", "log10_max_abs_diff", "n"], ident_rows)
    return out


def emit_report(report: ExperimentReport, out_dir, formats=("csv", "json")) -> list[Path]:
    """Write report.csv / report.json, replications.csv and series_<figure>.csv files."""
    out_dir = Path(out_dir)
    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        if "csv" in formats:
            path = out_dir / "report.csv"
            _write_csv(path, ROW_COLUMNS, report.rows)
            written.append(path)
            path = out_dir / "replications.csv"
            _write_csv(path, RECORD_COLUMNS, report.records)
            written.append(path)
        if "json" in formats:
            path = out_dir / "report.json"
            path.write_text(json.dumps(report.to_dict(), indent=1, allow_nan=False), encoding="utf-8")
            written.append(path)
        for key, (columns, table) in series(report).items():
            path = out_dir / f"series_{key}.csv"
            _write_csv(path, columns, table)
            written.append(path)
    except OSError as exc:
        raise OSError(f"cannot write report to {out_dir}: {exc}") from exc
    return written


def load_report(path) -> ExperimentReport:
    return ExperimentReport.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))
