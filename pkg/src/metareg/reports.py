"""CSV ingestion, scenario configuration, and report serialization.

JSON is the canonical machine output (full float precision, lossless
round-trip); CSV is the display format, fixed at 4 decimals to match the
summary-table convention. All writers are deterministic byte-for-byte
given the same inputs.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np

from .data import Dataset, ModelSpec, StudyRecord
from .effects import logit_effect_arrays
from .errors import DataError
from .estimation import FitResult, FitSettings
from .inference import confidence_intervals
from .rng import parse_seed
from .simulation import Scenario, ScenarioDesign, SimulationSummary
from .synthetic import standard_fitted_specs, synthetic_design

CSV_DECIMALS = 4


@dataclass(frozen=True)
class ColumnMapping:
    """Names the input CSV columns carrying counts and moderators."""

    events_col: str
    total_col: str
    moderator_cols: tuple = ()
    id_col: str | None = None

    def required(self):
        cols = [self.events_col, self.total_col, *self.moderator_cols]
        if self.id_col:
            cols.append(self.id_col)
        return cols


def ingest_csv(path, mapping: ColumnMapping) -> Dataset:
    """Read a UTF-8, comma-delimited, headered CSV into a Dataset.

    Empty or non-numeric moderator cells become missing values (eligible
    for complete-case dropping at fit time); events and totals must parse
    as integers or the row is an error.
    """
    with open(path, encoding="utf-8", newline="") as handle:
        reader = csv.DictReader(handle)
        if reader.fieldnames is None:
            raise DataError(f"{path}: empty file or missing header row")
        missing = [c for c in mapping.required() if c not in reader.fieldnames]
        if missing:
            raise DataError(
                f"{path}: missing mapped columns {missing}; "
                f"header has {reader.fieldnames}"
            )
        studies = []
        for lineno, row in enumerate(reader, start=2):
            study_id = row[mapping.id_col].strip() if mapping.id_col else f"study-{lineno - 1}"
            try:
                events = int(str(row[mapping.events_col]).strip())
                total = int(str(row[mapping.total_col]).strip())
            except (TypeError, ValueError):
                raise DataError(
                    f"{path}:{lineno}: events/total must be integers, got "
                    f"{row[mapping.events_col]!r}/{row[mapping.total_col]!r}"
                ) from None
            moderators = {}
            for name in mapping.moderator_cols:
                cell = (row[name] or "").strip()
                try:
                    moderators[name] = float(cell)
                except ValueError:
                    moderators[name] = None
            try:
                studies.append(
                    StudyRecord(
                        study_id=study_id,
                        events=events,
                        total=total,
                        moderators=moderators,
                    )
                )
            except DataError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    if not studies:
        raise DataError(f"{path}: no data rows")
    return Dataset(studies, mapping.moderator_cols)


def fit_report(fit: FitResult, level: float = 0.95) -> dict:
    """JSON-ready report of a fitted model; round-trips losslessly."""
    cis = confidence_intervals(fit, level)
    return {
        "model": {
            "moderators": list(fit.spec.moderators) if fit.spec else [],
            "interaction": bool(fit.spec.interaction) if fit.spec else False,
            "centering": fit.spec.centering if fit.spec else "none",
        },
        "k": fit.k,
        "p": fit.p,
        "df": fit.df,
        "level": level,
        "tau2": fit.tau2,
        "kh_scale": fit.kh_scale,
        "coefficients": [
            {
                "label": label,
                "estimate": ci.estimate,
                "std_error": ci.std_error,
                "lower": ci.lower,
                "upper": ci.upper,
            }
            for label, ci in cis.items()
        ],
        "center_offsets": {k: float(v) for k, v in fit.design.center_offsets.items()},
        "moderator_medians": {k: float(v) for k, v in fit.design.other_medians.items()},
        "convergence": {
            "iterations": fit.convergence.iterations,
            "score": fit.convergence.score,
            "boundary": fit.convergence.boundary,
            "method": fit.convergence.method,
            "converged": fit.convergence.converged,
        },
    }


def render_fit_table(report: dict) -> str:
    """Human-readable coefficient table for terminal output."""
    lines = []
    model = report["model"]
    desc = " + ".join(model["moderators"]) if model["moderators"] else "intercept only"
    if model["interaction"]:
        desc += " + interaction"
    lines.append(f"Mixed-effects meta-regression: {desc}")
    lines.append(
        f"k = {report['k']} studies, p = {report['p']} coefficients, "
        f"df = {report['df']}, tau2 = {report['tau2']:.6f}, "
        f"KH scale = {report['kh_scale']:.4f}"
    )
    pct = f"{100 * report['level']:g}%"
    lines.append(f"{'term':<14}{'estimate':>12}{'std.err':>12}{pct + ' CI':>28}")
    for row in report["coefficients"]:
        ci = f"[{row['lower']:.4f}, {row['upper']:.4f}]"
        lines.append(
            f"{row['label']:<14}{row['estimate']:>12.4f}{row['std_error']:>12.4f}{ci:>28}"
        )
    return "\n".join(lines)


def bands_to_csv(bands) -> str:
    """Prediction bands as CSV, one block per moderator."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["moderator", "x_centered", "x_raw", "predicted", "lower", "upper"])
    for band, offset in bands:
        for i in range(band.grid.size):
            writer.writerow(
                [
                    band.moderator,
                    _fmt(band.grid[i]),
                    _fmt(band.grid[i] + offset),
                    _fmt(band.predicted[i]),
                    _fmt(band.lower[i]),
                    _fmt(band.upper[i]),
                ]
            )
    return buf.getvalue()


def _fmt(x) -> str:
    return f"{float(x):.{CSV_DECIMALS}f}"


def summary_to_csv(summary: SimulationSummary) -> str:
    """Metric x coefficient rows, one column per fitted model, 4 decimals."""
    order = []
    seen = set()
    for model in summary.models:
        for label in model.labels:
            if label not in seen:
                seen.add(label)
                order.append(label)
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["metric", "coefficient", *[m.name for m in summary.models]])
    for metric, attr in (
        ("coverage", "coverage"),
        ("median_length", "median_length"),
        ("bias", "bias"),
    ):
        for label in order:
            row = [metric, label]
            for model in summary.models:
                value = getattr(model, attr).get(label)
                row.append("" if value is None else _fmt(value))
            writer.writerow(row)
    return buf.getvalue()


def summary_to_json(summary: SimulationSummary) -> str:
    """Full-precision summary with replicate accounting."""
    payload = {
        "scenario": summary.scenario,
        "level": summary.level,
        "n_reps": summary.n_reps,
        "master_seed": summary.master_seed,
        "models": [
            {
                "name": model.name,
                "n_reps": model.n_reps,
                "n_converged": model.n_converged,
                "n_excluded": model.n_excluded,
                "empty": model.empty,
                "coefficients": [
                    {
                        "label": label,
                        "truth": model.truth[label],
                        "coverage": model.coverage[label],
                        "median_length": model.median_length[label],
                        "bias": model.bias[label],
                    }
                    for label in model.labels
                ],
            }
            for model in summary.models
        ],
    }
    return json.dumps(payload, indent=2) + "\n"


def _config_error(field, message):
    return DataError(f"scenario config field {field!r}: {message}")


def _require(config, field, kind, validate=None, note=""):
    if field not in config:
        raise _config_error(field, "missing")
    value = config[field]
    if not isinstance(value, kind):
        raise _config_error(field, f"expected {kind}, got {type(value).__name__}")
    if validate and not validate(value):
        raise _config_error(field, note or "invalid value")
    return value


def load_scenario(path, n_reps=None, master_seed=None, settings: FitSettings | None = None) -> Scenario:
    """Build a Scenario from a JSON config file.

    The config is a flat object: name, true_beta (4 numbers), tau2, level,
    n_reps, seed, and a design block with source "synthetic" (optional
    overrides: seed, k, size_range, year_sd, age_sd, corr) or source "csv"
    (path, events, total, moderators, optional id). Optional
    "fitted_models" entries carry {name, moderators, interaction}.
    """
    try:
        with open(path, encoding="utf-8") as handle:
            config = json.load(handle)
    except OSError as exc:
        raise DataError(f"cannot read scenario config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(
            f"{path}: invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}"
        ) from exc
    if not isinstance(config, dict):
        raise DataError(f"{path}: scenario config must be a JSON object")

    name = _require(config, "name", str)
    beta = _require(
        config, "true_beta", list,
        lambda b: len(b) == 4 and all(isinstance(x, (int, float)) for x in b),
        "must be a list of 4 numbers",
    )
    tau2 = _require(config, "tau2", (int, float), lambda t: t >= 0, "must be nonnegative")
    level = config.get("level", 0.95)
    if not isinstance(level, (int, float)) or not 0 < level < 1:
        raise _config_error("level", "must be a number in (0, 1)")
    reps = n_reps if n_reps is not None else config.get("n_reps", 10000)
    if not isinstance(reps, int) or reps < 1:
        raise _config_error("n_reps", "must be a positive integer")
    seed = master_seed if master_seed is not None else config.get("seed", 0)
    if isinstance(seed, str):
        seed = parse_seed(seed)
    if not isinstance(seed, int) or not 0 <= seed < 1 << 64:
        raise _config_error("seed", "must be an unsigned 64-bit integer")

    design = _load_design(config.get("design", {"source": "synthetic"}))

    fitted = config.get("fitted_models")
    if fitted is None:
        specs = standard_fitted_specs(design.moderator_names)
    else:
        if not isinstance(fitted, list) or not fitted:
            raise _config_error("fitted_models", "must be a nonempty list")
        specs = []
        for i, entry in enumerate(fitted):
            if not isinstance(entry, dict) or "moderators" not in entry:
                raise _config_error(f"fitted_models[{i}]", "needs a 'moderators' list")
            mods = tuple(entry["moderators"])
            unknown = set(mods) - set(design.moderator_names)
            if unknown:
                raise _config_error(
                    f"fitted_models[{i}].moderators",
                    f"unknown names {sorted(unknown)}; design has "
                    f"{list(design.moderator_names)}",
                )
            spec = ModelSpec(mods, interaction=bool(entry.get("interaction", False)))
            specs.append((entry.get("name", f"model{i + 1}"), spec))
        specs = tuple(specs)

    return Scenario(
        name=name,
        true_beta=np.asarray(beta, dtype=np.float64),
        tau2=float(tau2),
        design=design,
        fitted_specs=specs,
        n_reps=reps,
        level=float(level),
        master_seed=seed,
        settings=settings if settings is not None else FitSettings(),
    )


def _load_design(block) -> ScenarioDesign:
    if not isinstance(block, dict) or "source" not in block:
        raise _config_error("design", "must be an object with a 'source' key")
    source = block["source"]
    if source == "synthetic":
        kwargs = {}
        for key, target in (
            ("seed", "seed"), ("k", "k"), ("year_sd", "year_sd"),
            ("age_sd", "age_sd"), ("corr", "corr"),
        ):
            if key in block:
                kwargs[target] = block[key]
        if "size_range" in block:
            kwargs["size_range"] = tuple(block["size_range"])
        if "moderators" in block:
            kwargs["moderator_names"] = tuple(block["moderators"])
        return synthetic_design(**kwargs)
    if source == "csv":
        for key in ("path", "events", "total", "moderators"):
            if key not in block:
                raise _config_error(f"design.{key}", "missing")
        mods = tuple(block["moderators"])
        if len(mods) != 2:
            raise _config_error("design.moderators", "need exactly two moderators")
        mapping = ColumnMapping(
            events_col=block["events"],
            total_col=block["total"],
            moderator_cols=mods,
            id_col=block.get("id"),
        )
        dataset = ingest_csv(block["path"], mapping)
        return design_from_dataset(dataset, mods)
    raise _config_error("design.source", f"unknown source {source!r}")


def design_from_dataset(dataset: Dataset, moderator_names) -> ScenarioDesign:
    """Scenario design from a dataset's complete cases: centered moderator
    columns and study sizes of the rows the interaction model retains."""
    from .data import build_design

    spec = ModelSpec(tuple(moderator_names), interaction=True, centering="mean")
    design, retained = build_design(dataset, spec)
    sizes = np.array([dataset.studies[i].total for i in retained], dtype=np.int64)
    return ScenarioDesign(
        moderator_names=tuple(moderator_names),
        columns={name: design.column(name).copy() for name in moderator_names},
        sizes=sizes,
    )
