"""Agreement with human judgments: the three correlation aggregation levels.

Given (prediction, human) pairs over a documents-by-systems grid:

* sample level: mean over documents of the per-document rank correlation
  across systems;
* system level: one rank correlation between per-system mean predictions and
  per-system mean human scores;
* summary level: one rank correlation over all pairs pooled across documents
  and systems.

Per-document correlations that are undefined (zero rank variance on either
side) are skipped and counted by default; ``impute_zero`` treats them as 0
for comparison with works that impute.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from ladderscore.core import MetaEvalRecord


class CorrelationLevel(str, Enum):
    SYSTEM = "system"
    SAMPLE = "sample"
    SUMMARY = "summary"


class CoefficientKind(str, Enum):
    SPEARMAN = "spearman"
    KENDALL = "kendall"


class DegenerateInputError(ValueError):
    """Every per-document correlation was undefined."""


@dataclass(frozen=True)
class PerDocumentRho:
    context_id: str
    rho: Optional[float]
    skipped: bool


@dataclass(frozen=True)
class CorrelationReport:
    dataset: str
    dimension: str
    level: CorrelationLevel
    coefficient_kind: CoefficientKind
    value: float
    per_document: tuple[PerDocumentRho, ...] = field(default=())
    skipped_count: int = 0


def spearman(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Spearman's rho with average-rank tie handling.

    Returns None when either side has zero rank variance (undefined).
    """
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least 2 pairs")
    rx = stats.rankdata(xs)
    ry = stats.rankdata(ys)
    if np.std(rx) == 0 or np.std(ry) == 0:
        return None
    return float(np.corrcoef(rx, ry)[0, 1])


def kendall(xs: Sequence[float], ys: Sequence[float]) -> Optional[float]:
    """Kendall's tau-b; None when undefined."""
    if len(xs) != len(ys):
        raise ValueError(f"length mismatch: {len(xs)} vs {len(ys)}")
    if len(xs) < 2:
        raise ValueError("need at least 2 pairs")
    if len(set(xs)) < 2 or len(set(ys)) < 2:
        return None
    tau = stats.kendalltau(xs, ys).statistic
    return None if np.isnan(tau) else float(tau)


_COEFFICIENTS = {
    CoefficientKind.SPEARMAN: spearman,
    CoefficientKind.KENDALL: kendall,
}


def _grid(records: Sequence[MetaEvalRecord]) -> dict[str, list[MetaEvalRecord]]:
    by_doc: dict[str, list[MetaEvalRecord]] = {}
    for rec in records:
        by_doc.setdefault(rec.context_id, []).append(rec)
    return by_doc


def _single_dimension(records: Sequence[MetaEvalRecord]) -> str:
    dims = sorted({r.dimension for r in records})
    if len(dims) != 1:
        raise ValueError(f"records span multiple dimensions: {dims}")
    return dims[0]


def sample_level(
    records: Sequence[MetaEvalRecord],
    coefficient: CoefficientKind = CoefficientKind.SPEARMAN,
    impute_zero: bool = False,
    dataset: str = "",
) -> CorrelationReport:
    """Mean per-document correlation across systems within each document."""
    if not records:
        raise ValueError("no records")
    dimension = _single_dimension(records)
    corr = _COEFFICIENTS[coefficient]
    grid = _grid(records)
    per_document: list[PerDocumentRho] = []
    values: list[float] = []
    for context_id in sorted(grid):
        doc_records = sorted(grid[context_id], key=lambda r: r.system_id)
        if len(doc_records) < 2:
            raise ValueError(f"document {context_id!r} has fewer than 2 systems")
        rho = corr(
            [r.prediction for r in doc_records],
            [r.human_score for r in doc_records],
        )
        if rho is None and impute_zero:
            rho = 0.0
        skipped = rho is None
        per_document.append(PerDocumentRho(context_id, rho, skipped))
        if not skipped:
            values.append(rho)
    if not values:
        raise DegenerateInputError(
            "every per-document correlation was undefined"
        )
    return CorrelationReport(
        dataset=dataset,
        dimension=dimension,
        level=CorrelationLevel.SAMPLE,
        coefficient_kind=coefficient,
        value=float(np.mean(values)),
        per_document=tuple(per_document),
        skipped_count=sum(1 for p in per_document if p.skipped),
    )


def system_level(
    records: Sequence[MetaEvalRecord],
    coefficient: CoefficientKind = CoefficientKind.SPEARMAN,
    dataset: str = "",
) -> CorrelationReport:
    """Correlation of per-system mean prediction vs per-system mean human."""
    if not records:
        raise ValueError("no records")
    dimension = _single_dimension(records)
    by_system: dict[str, list[MetaEvalRecord]] = {}
    for rec in records:
        by_system.setdefault(rec.system_id, []).append(rec)
    doc_sets = {sys: {r.context_id for r in recs} for sys, recs in by_system.items()}
    all_docs = set.union(*doc_sets.values())
    ragged = {sys for sys, docs in doc_sets.items() if docs != all_docs}
    if ragged:
        raise ValueError(
            f"ragged grid: systems {sorted(ragged)} missing some documents"
        )
    systems = sorted(by_system)
    pred_means = [float(np.mean([r.prediction for r in by_system[s]])) for s in systems]
    human_means = [
        float(np.mean([r.human_score for r in by_system[s]])) for s in systems
    ]
    value = _COEFFICIENTS[coefficient](pred_means, human_means)
    if value is None:
        raise DegenerateInputError("system-level correlation undefined")
    return CorrelationReport(
        dataset=dataset,
        dimension=dimension,
        level=CorrelationLevel.SYSTEM,
        coefficient_kind=coefficient,
        value=value,
    )


def summary_level(
    records: Sequence[MetaEvalRecord],
    coefficient: CoefficientKind = CoefficientKind.SPEARMAN,
    dataset: str = "",
) -> CorrelationReport:
    """One correlation over all pairs pooled across documents and systems."""
    if len(records) < 2:
        raise ValueError("need at least 2 records")
    dimension = _single_dimension(records)
    ordered = sorted(records, key=lambda r: (r.context_id, r.system_id))
    value = _COEFFICIENTS[coefficient](
        [r.prediction for r in ordered], [r.human_score for r in ordered]
    )
    if value is None:
        raise DegenerateInputError("summary-level correlation undefined")
    return CorrelationReport(
        dataset=dataset,
        dimension=dimension,
        level=CorrelationLevel.SUMMARY,
        coefficient_kind=coefficient,
        value=value,
    )


LEVEL_FUNCTIONS = {
    CorrelationLevel.SAMPLE: sample_level,
    CorrelationLevel.SYSTEM: system_level,
    CorrelationLevel.SUMMARY: summary_level,
}


def axis_correlation_matrix(
    human_scores: dict[str, dict[tuple[str, str], float]],
    coefficient: CoefficientKind = CoefficientKind.SPEARMAN,
    impute_zero: bool = False,
) -> tuple[list[str], np.ndarray]:
    """Sample-level correlations between pairs of human annotation axes.

    ``human_scores`` maps axis name -> {(context_id, system_id): score}. All
    axes must cover the same grid. Entry (a, b) treats axis a's scores as
    predictions and axis b's as human scores; the diagonal is 1 by
    definition and the matrix is symmetric.
    """
    axes = sorted(human_scores)
    if not axes:
        raise ValueError("no axes")
    grids = {axis: set(scores) for axis, scores in human_scores.items()}
    reference_grid = grids[axes[0]]
    for axis in axes[1:]:
        if grids[axis] != reference_grid:
            raise ValueError(f"axis {axis!r} covers a different (doc, system) grid")
    matrix = np.eye(len(axes))
    for i, a in enumerate(axes):
        for j in range(i + 1, len(axes)):
            b = axes[j]
            records = [
                MetaEvalRecord(
                    context_id=doc,
                    system_id=sys,
                    dimension=f"{a}~{b}",
                    prediction=human_scores[a][(doc, sys)],
                    human_score=human_scores[b][(doc, sys)],
                )
                for doc, sys in sorted(reference_grid)
            ]
            report = sample_level(records, coefficient, impute_zero=impute_zero)
            matrix[i, j] = matrix[j, i] = report.value
    return axes, matrix
