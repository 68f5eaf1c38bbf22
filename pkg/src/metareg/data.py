"""Datasets, model specifications, centering, and design matrices.

A fitted model sees a self-consistent design: studies missing any selected
moderator are dropped first (complete-case analysis), centering offsets are
the means of the retained rows only, and the interaction column is the
elementwise product of the centered columns.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError

INTERCEPT_LABEL = "intercept"


@dataclass(frozen=True)
class StudyRecord:
    """One study's raw inputs: event count, sample size, moderator values.

    A moderator is missing when its key is absent, maps to None, or maps to
    a non-finite value.
    """

    study_id: str
    events: int
    total: int
    moderators: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.total < 1:
            raise DataError(f"study {self.study_id!r}: total must be >= 1, got {self.total}")
        if not 0 <= self.events <= self.total:
            raise DataError(
                f"study {self.study_id!r}: events must lie in [0, total], "
                f"got events={self.events}, total={self.total}"
            )

    def moderator_value(self, name: str):
        value = self.moderators.get(name)
        if value is None or not math.isfinite(value):
            return None
        return float(value)


@dataclass(frozen=True)
class Dataset:
    """Ordered studies plus the declared moderator names."""

    studies: tuple
    moderator_names: tuple

    def __init__(self, studies, moderator_names=()):
        object.__setattr__(self, "studies", tuple(studies))
        object.__setattr__(self, "moderator_names", tuple(moderator_names))
        if len(self.studies) < 1:
            raise DataError("dataset must contain at least one study")
        declared = set(self.moderator_names)
        for study in self.studies:
            unknown = set(study.moderators) - declared
            if unknown:
                raise DataError(
                    f"study {study.study_id!r} references undeclared moderators: "
                    f"{sorted(unknown)}"
                )

    def __len__(self):
        return len(self.studies)


@dataclass(frozen=True)
class ModelSpec:
    """Which moderators enter the model, plus interaction and centering.

    The intercept is always present. An interaction term is only permitted
    when exactly two moderators are selected.
    """

    moderators: tuple = ()
    interaction: bool = False
    centering: str = "mean"

    def __init__(self, moderators=(), interaction=False, centering="mean"):
        object.__setattr__(self, "moderators", tuple(moderators))
        object.__setattr__(self, "interaction", bool(interaction))
        object.__setattr__(self, "centering", centering)
        if len(set(self.moderators)) != len(self.moderators):
            raise DataError(f"duplicate moderators in model spec: {self.moderators}")
        if self.interaction and len(self.moderators) != 2:
            raise DataError(
                "interaction requires exactly two moderators, "
                f"got {len(self.moderators)}"
            )
        if centering not in ("none", "mean"):
            raise DataError(f"centering must be 'none' or 'mean', got {centering!r}")

    @property
    def interaction_label(self):
        return f"{self.moderators[0]}:{self.moderators[1]}" if self.interaction else None

    def column_labels(self):
        labels = [INTERCEPT_LABEL, *self.moderators]
        if self.interaction:
            labels.append(self.interaction_label)
        return tuple(labels)


@dataclass(frozen=True)
class DesignMatrix:
    """k x p design with centering metadata for prediction grids.

    ``center_offsets`` holds the subtracted mean per moderator (0.0 when
    centering is off); ``other_medians`` the medians of the centered
    moderator columns.
    """

    values: np.ndarray
    column_labels: tuple
    center_offsets: dict
    other_medians: dict

    @property
    def k(self):
        return self.values.shape[0]

    @property
    def p(self):
        return self.values.shape[1]

    def column(self, label: str) -> np.ndarray:
        try:
            j = self.column_labels.index(label)
        except ValueError:
            raise DataError(
                f"unknown column {label!r}; design has {list(self.column_labels)}"
            ) from None
        return self.values[:, j]


def design_from_columns(columns: dict, spec: ModelSpec) -> DesignMatrix:
    """Assemble a design from complete (no-missing) raw moderator columns.

    Columns are centered per ``spec.centering``, the interaction column is
    built from the centered values, and per-moderator offsets and medians
    are recorded.
    """
    cols = []
    offsets = {}
    medians = {}
    k = None
    for name in spec.moderators:
        raw = np.asarray(columns[name], dtype=np.float64)
        k = raw.size if k is None else k
        offset = float(raw.mean()) if spec.centering == "mean" else 0.0
        centered = raw - offset
        offsets[name] = offset
        medians[name] = float(np.median(centered))
        cols.append(centered)
    if k is None:
        first = next(iter(columns.values()), None)
        k = len(first) if first is not None else 0
    values = np.column_stack([np.ones(k), *cols]) if cols else np.ones((k, 1))
    if spec.interaction:
        values = np.column_stack([values, cols[0] * cols[1]])
    return DesignMatrix(
        values=values,
        column_labels=spec.column_labels(),
        center_offsets=offsets,
        other_medians=medians,
    )


def build_design(dataset: Dataset, spec: ModelSpec) -> tuple[DesignMatrix, list]:
    """Build the design matrix for ``spec`` on the complete cases of ``dataset``.

    Returns the design plus the indices of the retained studies (in dataset
    order); studies missing any selected moderator are dropped.

    Raises
    ------
    DataError
        If a selected moderator is not declared by the dataset, or no study
        has complete values for all selected moderators.
    """
    unknown = [m for m in spec.moderators if m not in dataset.moderator_names]
    if unknown:
        raise DataError(
            f"unknown moderators {unknown}; dataset declares "
            f"{list(dataset.moderator_names)}"
        )

    retained = []
    for idx, study in enumerate(dataset.studies):
        if all(study.moderator_value(m) is not None for m in spec.moderators):
            retained.append(idx)
    if not retained:
        raise DataError(
            f"no studies with complete values for moderators {list(spec.moderators)}"
        )

    columns = {
        m: np.array(
            [dataset.studies[i].moderator_value(m) for i in retained], dtype=np.float64
        )
        for m in spec.moderators
    }
    return design_from_columns(columns, spec), retained


def column_medians(design: DesignMatrix) -> dict:
    """Median of each centered moderator column (midpoint rule for even k)."""
    if design.k < 1:
        raise DataError("design has no rows")
    return {
        name: float(np.median(design.column(name)))
        for name in design.center_offsets
    }
