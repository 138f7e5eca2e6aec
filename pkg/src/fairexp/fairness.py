"""Exposure accounting for group fairness.

Positions confer exposure according to a position-based examination
model. A group-placement template prescribes which group occupies each
of the top-k display slots; its expected per-group exposure is a plain
sum of position values, so the projected effect of any template on the
cumulative unfairness is known before a ranking is materialized.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from itertools import product
from pathlib import Path

from .data import GROUP_A, GROUP_B


class ExposureError(ValueError):
    """Raised for invalid exposure model definitions or positions."""


class TemplateError(ValueError):
    """Raised when no placement of the required length is feasible."""


@dataclass(frozen=True)
class ExposureModel:
    """Precomputed examination probabilities P(1..k), non-increasing and positive."""

    kind: str
    values: tuple[float, ...]

    def __post_init__(self):
        if not self.values:
            raise ExposureError("exposure model needs at least one position")
        prev = float("inf")
        for v in self.values:
            if v <= 0.0:
                raise ExposureError(f"exposure {v} must be positive")
            if v > prev:
                raise ExposureError("exposure must be non-increasing in rank")
            prev = v

    @property
    def k(self) -> int:
        return len(self.values)

    def truncated(self, k: int) -> "ExposureModel":
        if k > self.k:
            raise ExposureError(f"model defines {self.k} positions, requested {k}")
        if k == self.k:
            return self
        return ExposureModel(kind=self.kind, values=self.values[:k])


def log_discount_model(k: int) -> ExposureModel:
    return ExposureModel("log_discount", tuple(1.0 / math.log2(r + 1) for r in range(1, k + 1)))


def inverse_rank_model(k: int) -> ExposureModel:
    return ExposureModel("inverse_rank", tuple(1.0 / r for r in range(1, k + 1)))


def table_model(values) -> ExposureModel:
    return ExposureModel("table", tuple(float(v) for v in values))


def make_exposure_model(kind: str, k: int, table=None) -> ExposureModel:
    if kind == "log_discount":
        return log_discount_model(k)
    if kind == "inverse_rank":
        return inverse_rank_model(k)
    if kind == "table":
        if table is None:
            raise ExposureError("table exposure model needs explicit values")
        return table_model(table).truncated(k)
    raise ExposureError(f"unknown exposure model kind {kind!r}")


def load_exposure_table(path: str | Path) -> ExposureModel:
    """Read a two-column text file of (rank, probability) rows, ranks 1..k."""
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.split()
            if len(parts) != 2:
                raise ExposureError(f"line {lineno}: expected '<rank> <probability>'")
            rows.append((int(parts[0]), float(parts[1])))
    rows.sort()
    if [r for r, _ in rows] != list(range(1, len(rows) + 1)):
        raise ExposureError("ranks must be contiguous starting at 1")
    return table_model([v for _, v in rows])


def exposure(model: ExposureModel, position: int) -> float:
    """Examination probability of a 1-based rank position."""
    if not 1 <= position <= model.k:
        raise ExposureError(f"position {position} outside 1..{model.k}")
    return model.values[position - 1]


@dataclass(frozen=True)
class GroupTemplate:
    """A length-k group placement with its expected per-group exposure."""

    placement: tuple[str, ...]
    exposure_a: float
    exposure_b: float

    def __len__(self) -> int:
        return len(self.placement)


def make_template(placement, model: ExposureModel) -> GroupTemplate:
    placement = tuple(placement)
    if len(placement) > model.k:
        raise ExposureError("placement longer than the exposure model")
    exp_a = sum(model.values[i] for i, g in enumerate(placement) if g == GROUP_A)
    exp_b = sum(model.values[i] for i, g in enumerate(placement) if g == GROUP_B)
    return GroupTemplate(placement=placement, exposure_a=exp_a, exposure_b=exp_b)


@lru_cache(maxsize=4096)
def _enumerate_cached(k: int, avail_a: int, avail_b: int, model: ExposureModel) -> tuple[GroupTemplate, ...]:
    templates = []
    for placement in product((GROUP_A, GROUP_B), repeat=k):
        n_a = placement.count(GROUP_A)
        if n_a <= avail_a and k - n_a <= avail_b:
            templates.append(make_template(placement, model))
    return tuple(templates)


def enumerate_templates(k: int, counts: tuple[int, int], model: ExposureModel) -> list[GroupTemplate]:
    """All group placements of length k honoring per-group availability.

    ``counts`` is the (group-A, group-B) document availability under the
    query. With both counts >= k this is the full set of 2^k placements.
    """
    avail_a, avail_b = counts
    if avail_a + avail_b < k:
        raise TemplateError(f"only {avail_a + avail_b} documents available for k={k}")
    return list(_enumerate_cached(k, min(avail_a, k), min(avail_b, k), model.truncated(k)))


@dataclass
class UnfairnessLedger:
    """Running signed cumulative exposure difference between the groups.

    ``cumulative`` tracks sum_t (exposure_A - beta * exposure_B); its
    absolute value is the unfairness the system tries to keep within
    ``epsilon``. The ledger reports threshold violations rather than
    failing, since skewed candidate pools can force overshoot.
    """

    beta: float
    epsilon: float
    cumulative: float = 0.0
    history: list[float] = field(default_factory=list)

    def __post_init__(self):
        if self.beta <= 0:
            raise ValueError("beta must be positive")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def projected_unfairness(ledger: UnfairnessLedger, template: GroupTemplate) -> float:
    """Signed cumulative unfairness if the template were served this round."""
    return ledger.cumulative + template.exposure_a - ledger.beta * template.exposure_b


def qualified_templates(
    ledger: UnfairnessLedger, templates: list[GroupTemplate]
) -> tuple[list[GroupTemplate], bool]:
    """Templates keeping |projected unfairness| within epsilon.

    When none qualifies, falls back to the full tie set of minimizers of
    the projected magnitude so downstream selection can still compare
    their regret. Returns (templates, fallback_flag).
    """
    if not templates:
        raise TemplateError("no templates to qualify")
    projections = [abs(projected_unfairness(ledger, t)) for t in templates]
    qualified = [t for t, p in zip(templates, projections) if p <= ledger.epsilon]
    if qualified:
        return qualified, False
    best = min(projections)
    return [t for t, p in zip(templates, projections) if p == best], True


def record(ledger: UnfairnessLedger, realized_template: GroupTemplate) -> UnfairnessLedger:
    """Add the expected exposure of the displayed group pattern to the ledger."""
    contribution = realized_template.exposure_a - ledger.beta * realized_template.exposure_b
    ledger.cumulative += contribution
    ledger.history.append(contribution)
    return ledger


def utility_ratio_beta(dataset) -> float:
    """Ratio of mean relevance grade of group A to group B over a dataset.

    Matches the merit-based reading of the unfairness coefficient: exposure
    proportional to average group utility.
    """
    totals = {GROUP_A: 0.0, GROUP_B: 0.0}
    counts = {GROUP_A: 0, GROUP_B: 0}
    for doc in dataset.all_documents():
        if doc.group is None:
            raise ValueError("dataset has unassigned groups")
        totals[doc.group] += doc.grade
        counts[doc.group] += 1
    if counts[GROUP_A] == 0 or counts[GROUP_B] == 0:
        raise ValueError("both groups must be present to compute beta")
    mean_a = totals[GROUP_A] / counts[GROUP_A]
    mean_b = totals[GROUP_B] / counts[GROUP_B]
    if mean_b == 0:
        raise ValueError("group B has zero mean utility; beta undefined")
    return mean_a / mean_b
