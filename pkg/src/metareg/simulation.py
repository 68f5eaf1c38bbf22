"""Monte Carlo laboratory for moderator/interaction misspecification.

A Scenario fixes the true four-coefficient model (intercept, two
moderators, interaction; zeros encode absent terms), the heterogeneity
variance, a frozen design (centered moderator columns plus study sizes),
and the set of fitted model specifications. Each replicate draws random
effects and binomial event counts, refits every spec, and records whether
each coefficient's confidence interval covers the truth, the interval
length, and the estimate. Replicates use per-index seed streams, so
summaries are identical for any parallelism.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import ModelSpec, design_from_columns
from .effects import expit, logit_effect_arrays
from .errors import DataError, NonConvergenceError, NumericalError, SingularDesignError
from .estimation import FitSettings, _fit_design
from .inference import SE_FLOOR, t_quantile
from .rng import RandomStream, SeedSpec


@dataclass(frozen=True)
class ScenarioDesign:
    """Frozen design: two centered moderator columns and study sizes."""

    moderator_names: tuple
    columns: dict
    sizes: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "moderator_names", tuple(self.moderator_names))
        object.__setattr__(self, "sizes", np.asarray(self.sizes, dtype=np.int64))
        object.__setattr__(
            self,
            "columns",
            {k: np.asarray(c, dtype=np.float64) for k, c in self.columns.items()},
        )
        if len(self.moderator_names) != 2:
            raise DataError("scenario designs carry exactly two moderators")
        k = self.sizes.shape[0]
        for name in self.moderator_names:
            if name not in self.columns:
                raise DataError(f"design columns missing moderator {name!r}")
            if self.columns[name].shape[0] != k:
                raise DataError("study_sizes length must match design rows")
        if np.any(self.sizes < 1):
            raise DataError("study sizes must be positive")

    @property
    def k(self):
        return int(self.sizes.shape[0])


@dataclass(frozen=True)
class Scenario:
    """A true data-generating process plus replication controls."""

    name: str
    true_beta: np.ndarray
    tau2: float
    design: ScenarioDesign
    fitted_specs: tuple
    n_reps: int = 10000
    level: float = 0.95
    master_seed: int = 0
    settings: FitSettings = field(default_factory=FitSettings)

    def __post_init__(self):
        beta = np.asarray(self.true_beta, dtype=np.float64)
        if beta.shape != (4,):
            raise DataError("true_beta must have exactly four entries")
        object.__setattr__(self, "true_beta", beta)
        if self.tau2 < 0:
            raise DataError("tau2 must be nonnegative")
        if self.n_reps < 1:
            raise DataError("n_reps must be at least 1")
        if not 0.0 < self.level < 1.0:
            raise DataError("level must lie in (0, 1)")
        if not self.fitted_specs:
            raise DataError("at least one fitted spec is required")

    def truth_for(self, label: str) -> float:
        """True value of a fitted coefficient, matched by column label."""
        m1, m2 = self.design.moderator_names
        lookup = {"intercept": 0, m1: 1, m2: 2, f"{m1}:{m2}": 3}
        if label not in lookup:
            raise DataError(f"coefficient {label!r} has no true-model counterpart")
        return float(self.true_beta[lookup[label]])

    def truth_design(self):
        """The four-column design the true linear predictor uses."""
        spec = ModelSpec(self.design.moderator_names, interaction=True, centering="mean")
        return design_from_columns(
            {m: self.design.columns[m] for m in self.design.moderator_names}, spec
        )


@dataclass(frozen=True)
class ReplicateTruth:
    """Latent state of one replicate: random effects through death counts."""

    u: np.ndarray
    theta: np.ndarray
    p: np.ndarray
    d: np.ndarray


@dataclass(frozen=True)
class ReplicateData:
    truth: ReplicateTruth
    y: np.ndarray
    v: np.ndarray


@dataclass(frozen=True)
class ModelSummary:
    """Per-coefficient coverage, median interval length, and bias."""

    name: str
    labels: tuple
    truth: dict
    coverage: dict
    median_length: dict
    bias: dict
    n_reps: int
    n_converged: int
    n_excluded: int

    @property
    def empty(self):
        return self.n_converged == 0


@dataclass(frozen=True)
class SimulationSummary:
    scenario: str
    level: float
    n_reps: int
    master_seed: int
    models: tuple


def generate_replicate(scenario: Scenario, stream: SeedSpec | RandomStream) -> ReplicateData:
    """Draw one replicate of the scenario's data-generating process.

    u ~ N(0, tau2), theta = X beta + u on the scenario's fixed centered
    design, p = expit(theta), d ~ Binomial(n, p), then the continuity-
    corrected logit transform yields (y, v). Design columns are not
    re-centered here; only outcomes are random.
    """
    if not isinstance(stream, RandomStream):
        stream = RandomStream(stream)
    x_true = scenario.truth_design().values
    u = math.sqrt(scenario.tau2) * stream.normals(scenario.design.k)
    theta = x_true @ scenario.true_beta + u
    prob = expit(theta)
    d = stream.binomials(scenario.design.sizes, prob)
    y, v = logit_effect_arrays(d, scenario.design.sizes)
    return ReplicateData(truth=ReplicateTruth(u=u, theta=theta, p=prob, d=d), y=y, v=v)


def coverage_metric(intervals, truth: float) -> float:
    """Fraction of (lower, upper) pairs containing ``truth`` (closed ends)."""
    intervals = list(intervals)
    if not intervals:
        raise DataError("coverage_metric needs at least one interval")
    hits = sum(1 for lower, upper in intervals if lower <= truth <= upper)
    return hits / len(intervals)


def median_length_metric(intervals) -> float:
    """Median of (upper - lower), midpoint convention for even counts."""
    intervals = list(intervals)
    if not intervals:
        raise DataError("median_length_metric needs at least one interval")
    return float(np.median([upper - lower for lower, upper in intervals]))


def bias_metric(estimates, truth: float) -> float:
    """Mean of (estimate - truth), accumulated with compensated summation."""
    estimates = list(estimates)
    if not estimates:
        raise DataError("bias_metric needs at least one estimate")
    return math.fsum(e - truth for e in estimates) / len(estimates)


def _prepare(scenario: Scenario):
    """Fixed per-spec designs, truth vectors, and t critical values."""
    prepared = []
    for name, spec in scenario.fitted_specs:
        design = design_from_columns(
            {m: scenario.design.columns[m] for m in spec.moderators}, spec
        )
        truth = np.array([scenario.truth_for(lbl) for lbl in design.column_labels])
        crit = t_quantile(0.5 * (1.0 + scenario.level), design.k - design.p)
        prepared.append((name, design, truth, crit))
    return prepared


def _run_chunk(scenario, prepared, x_true, start, stop):
    """Replicates [start, stop); returns per-spec result arrays."""
    n = stop - start
    k = scenario.design.k
    sqrt_tau = math.sqrt(scenario.tau2)
    out = []
    for _, design, truth, _ in prepared:
        p = design.p
        out.append(
            {
                "converged": np.zeros(n, dtype=bool),
                "contains": np.zeros((n, p), dtype=bool),
                "length": np.zeros((n, p)),
                "estimate": np.zeros((n, p)),
            }
        )
    for offset in range(n):
        stream = RandomStream(SeedSpec(scenario.master_seed, start + offset))
        u = sqrt_tau * stream.normals(k)
        theta = x_true @ scenario.true_beta + u
        d = stream.binomials(scenario.design.sizes, expit(theta))
        y, v = logit_effect_arrays(d, scenario.design.sizes)
        for spec_idx, (_, design, truth, crit) in enumerate(prepared):
            try:
                fit = _fit_design(design, y, v, scenario.settings)
            except (NonConvergenceError, SingularDesignError, NumericalError,
                    np.linalg.LinAlgError):
                continue
            se = np.sqrt(fit.kh_scale * np.diag(fit.cov_unscaled))
            se = np.maximum(se, SE_FLOOR)
            half = crit * se
            slot = out[spec_idx]
            slot["converged"][offset] = True
            slot["contains"][offset] = np.abs(fit.coef - truth) <= half
            slot["length"][offset] = 2.0 * half
            slot["estimate"][offset] = fit.coef
    return out


def run_simulation(scenario: Scenario, parallelism: int = 1, progress=None) -> SimulationSummary:
    """Run the scenario and aggregate per-spec, per-coefficient summaries.

    Coverage, median interval length, and bias are computed over converged
    replicates only; non-convergent fits are excluded and counted. Results
    are identical for any ``parallelism`` at a fixed master seed.
    """
    if parallelism < 1:
        raise DataError("parallelism must be at least 1")
    prepared = _prepare(scenario)
    x_true = scenario.truth_design().values

    n = scenario.n_reps
    if parallelism == 1:
        chunks = [_run_chunk(scenario, prepared, x_true, 0, n)]
        if progress:
            progress(n)
    else:
        bounds = np.linspace(0, n, 4 * parallelism + 1, dtype=int)
        spans = [(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            futures = [
                pool.submit(_run_chunk, scenario, prepared, x_true, a, b)
                for a, b in spans
            ]
            chunks = []
            done = 0
            for future, (a, b) in zip(futures, spans):
                chunks.append(future.result())
                done += b - a
                if progress:
                    progress(done)

    models = []
    for spec_idx, (name, design, truth, _) in enumerate(prepared):
        converged = np.concatenate([c[spec_idx]["converged"] for c in chunks])
        contains = np.concatenate([c[spec_idx]["contains"] for c in chunks])
        length = np.concatenate([c[spec_idx]["length"] for c in chunks])
        estimate = np.concatenate([c[spec_idx]["estimate"] for c in chunks])
        labels = design.column_labels
        n_conv = int(converged.sum())
        if n_conv == 0:
            coverage = {lbl: None for lbl in labels}
            med_len = dict(coverage)
            bias = dict(coverage)
        else:
            keep = converged
            coverage = {
                lbl: int(contains[keep, j].sum()) / n_conv
                for j, lbl in enumerate(labels)
            }
            med_len = {
                lbl: float(np.median(length[keep, j])) for j, lbl in enumerate(labels)
            }
            bias = {
                lbl: math.fsum(estimate[keep, j]) / n_conv - float(truth[j])
                for j, lbl in enumerate(labels)
            }
        models.append(
            ModelSummary(
                name=name,
                labels=labels,
                truth={lbl: float(truth[j]) for j, lbl in enumerate(labels)},
                coverage=coverage,
                median_length=med_len,
                bias=bias,
                n_reps=n,
                n_converged=n_conv,
                n_excluded=n - n_conv,
            )
        )
    return SimulationSummary(
        scenario=scenario.name,
        level=scenario.level,
        n_reps=n,
        master_seed=scenario.master_seed,
        models=tuple(models),
    )
