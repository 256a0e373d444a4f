"""Domain types shared by every stage of the pipeline.

All types here are frozen dataclasses validated at construction, so they are
safe to share across concurrent workers without locking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping, Sequence

DISTRIBUTION_SUM_TOLERANCE = 1e-9


class DatasetKind(str, Enum):
    """The three supported source-item families."""

    SUMMARIZATION = "summarization"
    DIALOG = "dialog"
    STORY = "story"


@dataclass(frozen=True)
class EvaluationContext:
    """One source item: a news article, a conversation, or a story idea."""

    dataset_kind: DatasetKind
    context_id: str
    context_text: str

    def __post_init__(self) -> None:
        if not self.context_id:
            raise ValueError("context_id must be non-empty")
        if not self.context_text:
            raise ValueError(f"context_text empty for context {self.context_id!r}")


@dataclass(frozen=True)
class QualityDimension:
    """A named evaluation axis plus its plain-text description."""

    name: str
    description: str

    def __post_init__(self) -> None:
        if not self.name:
            raise ValueError("dimension name must be non-empty")
        if not self.description:
            raise ValueError(f"dimension {self.name!r} has an empty description")


@dataclass(frozen=True)
class CandidateText:
    """A machine-generated text under evaluation, tagged by its generator."""

    system_id: str
    text: str

    def __post_init__(self) -> None:
        if not self.text:
            raise ValueError(f"candidate text empty for system {self.system_id!r}")


@dataclass(frozen=True)
class GenerationProvenance:
    """How a reference ladder was produced, enough to reproduce it exactly."""

    model: str
    template_hashes: Mapping[str, str]
    generation_order: tuple[int, ...]
    temperature: float
    top_p: float
    seed: int


@dataclass(frozen=True)
class SyntheticReferenceSet:
    """An ordered ladder of n reference texts with integer scores 1..n."""

    context_id: str
    dimension: str
    n: int
    references: tuple[tuple[int, str], ...]
    provenance: GenerationProvenance

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError(f"reference ladder needs n >= 2, got {self.n}")
        scores = [score for score, _ in self.references]
        if sorted(scores) != list(range(1, self.n + 1)):
            raise ValueError(
                f"reference scores must be exactly 1..{self.n}, got {scores}"
            )
        for score, text in self.references:
            if not text:
                raise ValueError(f"reference with score {score} has empty text")
        if sorted(self.provenance.generation_order) != list(range(1, self.n + 1)):
            raise ValueError("generation_order must be a permutation of 1..n")

    def text_for(self, score: int) -> str:
        for s, text in self.references:
            if s == score:
                return text
        raise KeyError(score)


@dataclass(frozen=True)
class ComparisonDistribution:
    """Normalized probabilities over {Better, Worse, Similar} for one pair."""

    p_better: float
    p_worse: float
    p_similar: float

    def __post_init__(self) -> None:
        for name, p in (
            ("p_better", self.p_better),
            ("p_worse", self.p_worse),
            ("p_similar", self.p_similar),
        ):
            if not (0.0 <= p <= 1.0):
                raise ValueError(f"{name}={p} outside [0, 1]")
        total = self.p_better + self.p_worse + self.p_similar
        if abs(total - 1.0) > DISTRIBUTION_SUM_TOLERANCE:
            raise ValueError(f"probabilities sum to {total}, not 1")

    @classmethod
    def from_log_weights(
        cls, better: float, worse: float, similar: float
    ) -> "ComparisonDistribution":
        """Softmax three finite log-weights into a valid distribution.

        Numerically stable (max-subtraction), so any finite inputs produce a
        distribution summing to 1 within tolerance.
        """
        logs = [better, worse, similar]
        if not all(math.isfinite(x) for x in logs):
            raise ValueError(f"log weights must be finite, got {logs}")
        m = max(logs)
        exps = [math.exp(x - m) for x in logs]
        z = sum(exps)
        return cls(exps[0] / z, exps[1] / z, exps[2] / z)


@dataclass(frozen=True)
class MetaEvalRecord:
    """One (document, system, dimension) row feeding correlation metrics.

    Human scores are reals: benchmark annotations are typically means over
    several annotators.
    """

    context_id: str
    system_id: str
    dimension: str
    prediction: float
    human_score: float


@dataclass(frozen=True)
class AnnotatedRecord:
    """A candidate with its context and per-dimension human scores."""

    context: EvaluationContext
    candidate: CandidateText
    human_scores: Mapping[str, float]


@dataclass(frozen=True)
class ValidationIssue:
    """One violated invariant with a locator for the offending record."""

    kind: str
    locator: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple[ValidationIssue, ...] = field(default=())

    @property
    def ok(self) -> bool:
        return not self.issues


def validate_dataset(records: Sequence[AnnotatedRecord]) -> ValidationReport:
    """Check dataset-level invariants; report-returning, never raises.

    Individual type invariants are enforced at construction; this checks the
    cross-record ones: unique (context_id, system_id) pairs and consistent
    context text per context_id. Records that failed construction should be
    passed through ``collect_construction_issues`` by the adapter instead.
    """
    issues: list[ValidationIssue] = []
    seen_pairs: set[tuple[str, str]] = set()
    context_texts: dict[str, str] = {}
    for idx, rec in enumerate(records):
        locator = f"record[{idx}]"
        pair = (rec.context.context_id, rec.candidate.system_id)
        if pair in seen_pairs:
            issues.append(
                ValidationIssue(
                    kind="duplicate_key",
                    locator=locator,
                    message=f"duplicate (context_id, system_id) pair {pair}",
                )
            )
        seen_pairs.add(pair)
        prior = context_texts.setdefault(rec.context.context_id, rec.context.context_text)
        if prior != rec.context.context_text:
            issues.append(
                ValidationIssue(
                    kind="inconsistent_context",
                    locator=locator,
                    message=(
                        f"context {rec.context.context_id!r} has conflicting "
                        "context_text across records"
                    ),
                )
            )
        if not rec.human_scores:
            issues.append(
                ValidationIssue(
                    kind="missing_annotations",
                    locator=locator,
                    message=f"no human scores for pair {pair}",
                )
            )
    return ValidationReport(tuple(issues))


def check_raw_record(
    context_id: str,
    system_id: str,
    context_text: str,
    candidate_text: str,
) -> Iterable[ValidationIssue]:
    """Invariant checks on raw (pre-construction) field values.

    Used by adapters to report problems instead of aborting on the first
    malformed row.
    """
    locator = f"({context_id!r}, {system_id!r})"
    if not context_text:
        yield ValidationIssue("empty_context", locator, "context text is empty")
    if not candidate_text:
        yield ValidationIssue(
            "empty_candidate", locator, f"empty candidate text for system {system_id!r}"
        )
