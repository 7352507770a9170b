"""End-to-end orchestration: panel -> indices -> features -> GAM screen -> ANN -> test."""
from __future__ import annotations

import dataclasses
import hashlib
import json
import platform
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .ann import AnnStageReport, Champion, TrainConfig, run_ann_stage
from .data_ingest import (
    SyntheticConfig,
    generate_synthetic_panel,
    parse_panel_csv,
    validate_panel,
    write_panel_csv,
)
from .errors import ConfigError, DroughtcastError, NoSurvivorsError, StageError, UsageError
from .evaluation import evaluate_champion, write_evaluation
from .features import (
    build_feature_table,
    make_split_plan,
    read_feature_table,
    read_split_plan,
    write_feature_table,
    write_split_plan,
)
from .gam import GamStageReport, run_gam_stage
from .indices import build_index_table, write_index_table
from .metrics import regression_metrics
from .model_space import enumerate_models, write_models

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

# file names inside an output directory
FILES = {
    "panel": "panel.csv",
    "validation": "panel_validation.json",
    "indices": "indices.csv",
    "features": "features.csv",
    "plan": "plan.json",
    "models": "models.json",
    "gam": "gam_report.json",
    "ann": "ann_report.json",
    "champion": "champion.json",
    "evaluation": "eval_report.json",
    "assumption": "assumption_report.json",
    "manifest": "manifest.json",
}
REPORT_FORMATS = ("json", "csv-tables", "markdown-summary")


@dataclass(frozen=True)
class PipelineConfig:
    """Run parameters. ``seed`` is mandatory and drives every random choice.

    The synthetic panel is used when ``input`` is None; its generator seed
    defaults to ``seed`` unless the synthetic table sets one.
    """

    seed: int
    input: str | None = None
    synthetic: dict = field(default_factory=dict)
    baseline: tuple[int, int] | None = None
    holdout_months: int = 24
    k: int = 10
    threshold: float = 0.70
    arch: tuple[int, ...] = (5, 3)
    max_steps: int = 1_000_000
    stop_threshold: float = 0.01
    smooth_all: bool = False
    validate_assumption: bool = False

    def __post_init__(self):
        if isinstance(self.seed, bool) or not isinstance(self.seed, int) or self.seed < 0:
            raise ConfigError(f"seed must be a non-negative integer, got {self.seed!r}")
        if self.baseline is not None:
            b = tuple(int(y) for y in self.baseline)
            if len(b) != 2 or b[0] > b[1]:
                raise ConfigError(f"baseline must be (first_year, last_year), got {self.baseline!r}")
            object.__setattr__(self, "baseline", b)
        object.__setattr__(self, "arch", tuple(int(h) for h in self.arch))
        object.__setattr__(self, "synthetic", dict(self.synthetic))
        checks = [
            (self.holdout_months >= 1, "holdout_months must be >= 1"),
            (self.k >= 2, "k must be >= 2"),
            (0.0 < self.threshold <= 1.0, "threshold must be in (0, 1]"),
            (len(self.arch) >= 1 and min(self.arch) >= 1, "arch sizes must be >= 1"),
            (self.max_steps >= 1, "max_steps must be >= 1"),
            (self.stop_threshold > 0, "stop_threshold must be > 0"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        self.synthetic_config()  # validate early

    def synthetic_config(self) -> SyntheticConfig:
        values = {"seed": self.seed, **self.synthetic}
        try:
            return SyntheticConfig.from_mapping(values)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"bad synthetic settings: {exc}") from exc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["baseline"] = list(self.baseline) if self.baseline else None
        d["arch"] = list(self.arch)
        return d

    @property
    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    @classmethod
    def from_mapping(cls, mapping) -> "PipelineConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(mapping) - known)
        if unknown:
            raise ConfigError(f"unknown config field(s): {unknown}")
        if "seed" not in mapping:
            raise ConfigError("config must set a seed")
        values = dict(mapping)
        for key in ("baseline", "arch"):
            if isinstance(values.get(key), str):
                values[key] = tuple(int(v) for v in values[key].split(","))
        try:
            return cls(**values)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    @classmethod
    def from_toml(cls, path, overrides=None) -> "PipelineConfig":
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"{path}: {exc}") from exc
        data.update({k: v for k, v in (overrides or {}).items() if v is not None})
        return cls.from_mapping(data)


@dataclass
class ReportBundle:
    out_dir: Path
    manifest: dict
    gam: GamStageReport | None = None
    ann: AnnStageReport | None = None
    champion: Champion | None = None
    evaluation: dict | None = None
    assumption: dict | None = None

    def path(self, name: str) -> Path:
        return self.out_dir / FILES[name]


def _now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def _versions() -> dict:
    import numba
    import scipy

    return {
        "droughtcast": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "pandas": pd.__version__,
        "scipy": scipy.__version__,
        "numba": numba.__version__,
    }


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=1)


class _Manifest:
    """Tracks stage status; rewritten after every stage so partial runs are visible."""

    STAGES = ("ingest", "indices", "features", "split", "enumerate", "gam", "ann", "evaluate",
              "validate-assumption")

    def __init__(self, config: PipelineConfig, out_dir: Path):
        self.path = out_dir / FILES["manifest"]
        self.data = {
            "config": config.to_dict(),
            "config_hash": config.hash,
            "versions": _versions(),
            "stages": {s: {"status": "pending"} for s in self.STAGES},
            "timestamps": {"started": _now()},
        }

    def mark(self, stage: str, status: str, **extra) -> None:
        self.data["stages"][stage] = {"status": status, **extra}
        self.data["timestamps"][stage] = _now()
        self.save()

    def save(self) -> None:
        _write_json(self.data, self.path)


def load_panel(config: PipelineConfig):
    if config.input is not None:
        return parse_panel_csv(config.input)
    return generate_synthetic_panel(config.synthetic_config())


def run_pipeline(config: PipelineConfig, out_dir, jobs: int = 1) -> ReportBundle:
    """Run every stage, writing each artifact into ``out_dir``.

    A stage failure is re-raised as StageError naming the stage, after the
    manifest has recorded it. An empty GAM selection raises NoSurvivorsError.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(config, out)
    manifest.save()
    bundle = ReportBundle(out, manifest.data)
    stage = "ingest"
    try:
        panel = load_panel(config)
        write_panel_csv(panel, out / FILES["panel"])
        _write_json(validate_panel(panel).to_dict(), out / FILES["validation"])
        manifest.mark(stage, "done")

        stage = "indices"
        indices = build_index_table(panel, config.baseline)
        write_index_table(indices, out / FILES["indices"])
        manifest.mark(stage, "done")

        stage = "features"
        table = build_feature_table(indices)
        write_feature_table(table, out / FILES["features"])
        manifest.mark(stage, "done", rows=len(table))

        stage = "split"
        plan = make_split_plan(table, config.holdout_months, config.k, config.seed)
        write_split_plan(plan, out / FILES["plan"])
        manifest.mark(stage, "done", test_rows=int(plan.test.size), dev_rows=int(plan.dev.size))

        stage = "enumerate"
        models = enumerate_models()
        write_models(models, out / FILES["models"])
        manifest.mark(stage, "done", models=len(models))

        stage = "gam"
        gam = run_gam_stage(models, table, plan, config.threshold, config.smooth_all, jobs=jobs)
        gam.write(out / FILES["gam"])
        bundle.gam = gam
        if not gam.selected:
            manifest.mark(stage, "no_survivors", selected=0)
            raise NoSurvivorsError(
                f"no model reached mean training R^2 >= {config.threshold}", stage=stage
            )
        manifest.mark(stage, "done", selected=len(gam.selected))

        stage = "ann"
        ann = run_ann_stage(gam.selected_specs(), table, plan, config.arch, _train_config(config),
                            config.seed, jobs=jobs)
        ann.write(out / FILES["ann"])
        ann.champion.write(out / FILES["champion"])
        bundle.ann, bundle.champion = ann, ann.champion
        manifest.mark(stage, "done", networks=ann.n_networks, champion=ann.champion.model_id)

        stage = "evaluate"
        bundle.evaluation = evaluate_champion(ann.champion, table, plan)
        write_evaluation(bundle.evaluation, out / FILES["evaluation"])
        manifest.mark(stage, "done")

        stage = "validate-assumption"
        if config.validate_assumption:
            bundle.assumption = _assumption_report(config, table, plan, gam, ann.champion, jobs)
            _write_json(bundle.assumption, out / FILES["assumption"])
            manifest.mark(stage, "done", models=bundle.assumption["n_models"])
        else:
            manifest.mark(stage, "skipped")
    except NoSurvivorsError:
        raise
    except Exception as exc:
        manifest.mark(stage, "failed", error=f"{type(exc).__name__}: {exc}")
        if stage == "ingest" and isinstance(exc, (DroughtcastError, OSError)):
            raise  # bad input rather than a failed computation
        raise StageError(f"stage {stage!r} failed: {exc}", stage=stage) from exc
    finally:
        manifest.data["timestamps"]["finished"] = _now()
        manifest.save()
    return bundle


def _train_config(config: PipelineConfig) -> TrainConfig:
    return TrainConfig(max_steps=config.max_steps, threshold=config.stop_threshold)


def _test_r2(cell, rows) -> float:
    return regression_metrics(rows["target"].to_numpy(float), cell.predict(rows)).r2


def _assumption_report(config, table, plan, gam: GamStageReport, champion: Champion, jobs) -> dict:
    selected = set(gam.selected)
    others = [s for s in enumerate_models() if s.id not in selected]
    test_rows = table.iloc[plan.test]
    champion_r2 = _test_r2(champion.cell, test_rows)
    report = {
        "champion": champion.model_id,
        "champion_test_r2": champion_r2,
        "n_models": len(others),
        "models": [],
        "best_model": None,
        "best_test_r2": None,
    }
    if not others:
        return report
    ann = run_ann_stage(others, table, plan, config.arch, _train_config(config), config.seed,
                        jobs=jobs, pick_champion=False)
    for r in ann.results:
        row = {
            "id": r["id"],
            "lag": r["lag"],
            "n_partitions": r["n_partitions"],
            "failures": r["failures"],
        }
        if r["n_partitions"]:
            row.update(
                r2_train=r["r2_train"]["mean"],
                r2_validation=r["r2_validation"]["mean"],
                overfit=r["overfit"],
                best_partition=r["best_partition"],
                r2_test=_test_r2(ann.best_cells[r["id"]], test_rows),
            )
        report["models"].append(row)
    scored = [m for m in report["models"] if "r2_test" in m]
    if scored:
        best = max(scored, key=lambda m: (m["r2_test"], m["id"]))
        report["best_model"], report["best_test_r2"] = best["id"], best["r2_test"]
    return report


def run_assumption_validation(config: PipelineConfig, out_dir, jobs: int = 1) -> dict:
    """Train ANNs for every model the GAM stage rejected, using a finished run's artifacts."""
    out = Path(out_dir)
    needed = ["features", "plan", "gam", "champion"]
    missing = [FILES[n] for n in needed if not (out / FILES[n]).exists()]
    if missing:
        raise UsageError(f"{out} is not a completed pipeline run (missing {missing})")
    table = read_feature_table(out / FILES["features"])
    plan = read_split_plan(out / FILES["plan"])
    gam = GamStageReport.read(out / FILES["gam"])
    champion = Champion.read(out / FILES["champion"])
    report = _assumption_report(config, table, plan, gam, champion, jobs)
    _write_json(report, out / FILES["assumption"])
    return report


# --------------------------------------------------------------------------
# reporting
# --------------------------------------------------------------------------

def _load(out: Path, name: str):
    path = out / FILES[name]
    if not path.exists():
        return None
    with open(path) as fh:
        return json.load(fh)


def gam_table(gam: dict) -> pd.DataFrame:
    """One row per GAM model in rank order, with its lag time in months."""
    rows = [
        {
            "model": r["id"],
            "r2_train": r.get("r2_train"),
            "r2_validation": r.get("r2_validation"),
            "overfit_index": r.get("overfit_index"),
            "overfit": r.get("overfit"),
            "lag_time": r["lag"],
            "selected": r["selected"],
        }
        for r in gam["results"]
    ]
    return pd.DataFrame(rows)


def ann_table(ann: dict) -> pd.DataFrame:
    """One row per ANN model, best mean validation R^2 first."""
    rows = []
    for r in ann["results"]:
        if not r["n_partitions"]:
            continue
        rows.append({
            "model": r["id"],
            "r2_train_min": r["r2_train"]["min"],
            "r2_train_max": r["r2_train"]["max"],
            "r2_train_mean": r["r2_train"]["mean"],
            "r2_validation_min": r["r2_validation"]["min"],
            "r2_validation_max": r["r2_validation"]["max"],
            "r2_validation_mean": r["r2_validation"]["mean"],
            "overfit_index": r["overfit_index"],
            "overfit": r["overfit"],
            "lag_time": r["lag"],
        })
    return pd.DataFrame(rows)


def r2_histogram(values, lags, width: float = 0.1) -> pd.DataFrame:
    """Counts of R^2 values per bin (rows) and lag (columns); negatives join the first bin."""
    edges = np.round(np.arange(0.0, 1.0 + width / 2, width), 10)
    v = np.asarray(values, dtype=float)
    bins = np.clip(np.floor(np.clip(v, 0.0, None) / width + 1e-9).astype(int), 0, edges.size - 2)
    labels = [f"[{edges[i]:.1f}, {edges[i + 1]:.1f})" for i in range(edges.size - 1)]
    frame = pd.DataFrame({"bin": [labels[b] for b in bins], "lag": lags})
    counts = pd.crosstab(frame["bin"], frame["lag"]).reindex(labels, fill_value=0)
    counts.columns = [f"lag {c}" for c in counts.columns]
    return counts


def _markdown_table(frame: pd.DataFrame, index: bool = True) -> str:
    cols = ([frame.index.name or ""] if index else []) + [str(c) for c in frame.columns]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for key, row in frame.iterrows():
        cells = ([str(key)] if index else []) + [
            f"{x:.3f}" if isinstance(x, float) else str(x) for x in row.tolist()
        ]
        lines.append("| " + " | ".join(cells) + " |")
    return "\n".join(lines)


def emit_report(out_dir, fmt: str, dest=None) -> list[Path]:
    """Write report files for a finished run; returns the paths written."""
    if fmt not in REPORT_FORMATS:
        raise UsageError(f"unknown report format {fmt!r}; choose from {REPORT_FORMATS}")
    out = Path(out_dir)
    dest = Path(dest) if dest else out
    dest.mkdir(parents=True, exist_ok=True)
    gam = _load(out, "gam")
    if gam is None:
        raise UsageError(f"{out} has no GAM report")
    ann = _load(out, "ann")
    evaluation = _load(out, "evaluation")
    assumption = _load(out, "assumption")

    if fmt == "json":
        path = dest / "report.json"
        _write_json({
            "gam_models": gam_table(gam).to_dict(orient="records"),
            "ann_models": ann_table(ann).to_dict(orient="records") if ann else None,
            "evaluation": evaluation,
            "assumption_validation": assumption,
        }, path)
        return [path]

    if fmt == "csv-tables":
        paths = [dest / "gam_models.csv"]
        gam_table(gam).to_csv(paths[0], index=False)
        if ann:
            paths.append(dest / "ann_models.csv")
            ann_table(ann).to_csv(paths[-1], index=False)
        return paths

    path = dest / "summary.md"
    g = gam_table(gam)
    parts = ["# Run summary", "", f"Models screened: {len(g)}; selected: {int(g['selected'].sum())} "
             f"(threshold {gam['threshold']}, smooth_all={gam['smooth_all']}).", ""]
    parts += ["## GAM training R^2 by lag", "", _markdown_table(r2_histogram(g["r2_train"].fillna(0), g["lag_time"])), ""]
    sel = g[g["selected"]]
    if len(sel):
        parts += ["## Selected models by lag", "",
                  _markdown_table(sel.groupby("lag_time").size().rename("models").to_frame()), ""]
    if ann:
        a = ann_table(ann)
        parts += ["## ANN models", "", _markdown_table(
            a[["model", "r2_train_mean", "r2_validation_mean", "overfit_index", "overfit"]], index=False), ""]
        if ann.get("champion"):
            parts += [f"Champion: `{ann['champion']['model']}` (partition {ann['champion']['partition']}).", ""]
    if evaluation:
        m = evaluation["metrics"]
        auroc = "n/a" if evaluation["auroc"] is None else f"{evaluation['auroc']:.4f}"
        parts += ["## Test set", "",
                  f"R^2 {m['r2']:.3f}, RMSE {m['rmse']:.3f}, phase accuracy {evaluation['accuracy']:.3f}, "
                  f"Hand-Till AUROC {auroc}.", ""]
    if assumption and assumption.get("best_model"):
        parts += ["## Non-selected models", "",
                  f"{assumption['n_models']} models; best test R^2 {assumption['best_test_r2']:.3f} "
                  f"({assumption['best_model']}) against the champion's {assumption['champion_test_r2']:.3f}.", ""]
    path.write_text("\n".join(parts))
    return [path]
