"""Turn pairwise judgments against a reference ladder into an absolute score.

The main variant scores the log-probabilities of "Better"/"Worse"/"Similar"
as continuations of a comparison prompt for each rung i, softmaxes them into
a distribution, and reduces with the weighted sum

    s = sum_i i * (p_better(i) - p_worse(i))

so s ranges over [-n(n+1)/2, +n(n+1)/2]. Three ablation variants ship
(sampled judgments, Yes/No probabilities, and a direct-scoring baseline that
softmaxes over the score strings themselves).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional, Sequence

from ladderscore.backend import (
    Backend,
    ContinuationScoreRequest,
    derive_seed,
)
from ladderscore.core import (
    ComparisonDistribution,
    DatasetKind,
    EvaluationContext,
    QualityDimension,
    SyntheticReferenceSet,
)
from ladderscore.prompts import PromptRegistry
from ladderscore.synthgen import CONTEXT_PLACEHOLDER

COMPARISON_CHOICES = ("Better", "Worse", "Similar")
YESNO_CHOICES = ("Yes", "No")

# Substituted for API-reported -inf / absent candidates before softmax.
LOGPROB_FLOOR = -30.0

DEFAULT_N_SAMPLES = 100


class ScoreVariant(str, Enum):
    BWS_PROB = "bws_prob"
    YESNO_PROB = "yesno_prob"
    SAMPLED = "sampled"
    GEVAL_BASELINE = "geval_baseline"


@dataclass(frozen=True)
class ScoreBreakdown:
    """Final score plus the per-rung distributions behind it (audit trail)."""

    per_reference: tuple[tuple[int, ComparisonDistribution], ...]
    final: float
    variant: ScoreVariant

    def __post_init__(self) -> None:
        if self.per_reference:
            n = len(self.per_reference)
            bound = n * (n + 1) / 2
            if abs(self.final) > bound + 1e-9:
                raise ValueError(f"final {self.final} outside +-{bound}")


def floor_log_weight(value: Optional[float]) -> float:
    """Clamp missing or -inf log-probabilities to the documented floor."""
    if value is None or not math.isfinite(value) or value < LOGPROB_FLOOR:
        return LOGPROB_FLOOR
    return value


def _predict_substitutions(
    ctx: EvaluationContext,
    dim: QualityDimension,
    reference: str,
    candidate: str,
    template_placeholders: frozenset[str],
    extra: Optional[dict[str, str]] = None,
) -> dict[str, str]:
    values = {
        "col": dim.name,
        "col_title": dim.name,
        "col_description": dim.description,
        CONTEXT_PLACEHOLDER[ctx.dataset_kind]: ctx.context_text,
        "icl_summary": reference,
        "target_summary": candidate,
    }
    if extra:
        values.update(extra)
    # Some templates (e.g. the story Yes/No one) omit the context placeholder.
    return {k: v for k, v in values.items() if k in template_placeholders}


def comparison_distribution(
    ctx: EvaluationContext,
    dim: QualityDimension,
    reference: str,
    candidate: str,
    backend: Backend,
    registry: PromptRegistry,
    variant_tag: str = "default",
) -> ComparisonDistribution:
    """Softmaxed Better/Worse/Similar probabilities for one (candidate, rung)."""
    if not reference or not candidate:
        raise ValueError("reference and candidate must be non-empty")
    template = registry.get(ctx.dataset_kind, "predict_bws", variant_tag)
    prompt = template.render(
        _predict_substitutions(
            ctx, dim, reference, candidate, template.placeholder_set
        )
    )
    scored = dict(
        backend.score_continuations(
            ContinuationScoreRequest(prompt=prompt, candidates=COMPARISON_CHOICES)
        )
    )
    return ComparisonDistribution.from_log_weights(
        floor_log_weight(scored.get("Better")),
        floor_log_weight(scored.get("Worse")),
        floor_log_weight(scored.get("Similar")),
    )


def direct_score(
    distributions: Sequence[tuple[int, ComparisonDistribution]],
    n: int,
    similar_weight: float = 0.0,
) -> float:
    """The weighted reduction over rungs: sum_i i * (p_better - p_worse).

    ``similar_weight`` scales an optional i * p_similar term; it defaults to
    0 and is never enabled in shipped configurations.
    """
    scores = sorted(i for i, _ in distributions)
    if scores != list(range(1, n + 1)):
        raise ValueError(f"distribution scores must cover 1..{n} exactly, got {scores}")
    return sum(
        i * (d.p_better - d.p_worse) + similar_weight * i * d.p_similar
        for i, d in distributions
    )


def _yesno_distribution(
    ctx: EvaluationContext,
    dim: QualityDimension,
    reference: str,
    candidate: str,
    backend: Backend,
    registry: PromptRegistry,
) -> ComparisonDistribution:
    """Two-direction Yes-normalization: p_better/p_worse from the normalized
    p(Yes) of the 'better' and 'worse' framings, p_similar fixed at 0."""
    template = registry.get(ctx.dataset_kind, "predict_yesno")
    p_yes: dict[str, float] = {}
    for direction in ("better", "worse"):
        prompt = template.render(
            _predict_substitutions(
                ctx,
                dim,
                reference,
                candidate,
                template.placeholder_set,
                extra={"prediction": direction},
            )
        )
        scored = dict(
            backend.score_continuations(
                ContinuationScoreRequest(prompt=prompt, candidates=YESNO_CHOICES)
            )
        )
        yes = math.exp(floor_log_weight(scored.get("Yes")))
        no = math.exp(floor_log_weight(scored.get("No")))
        p_yes[direction] = yes / (yes + no)
    total = p_yes["better"] + p_yes["worse"]
    return ComparisonDistribution(
        p_better=p_yes["better"] / total,
        p_worse=p_yes["worse"] / total,
        p_similar=0.0,
    )


def _sampled_distribution(
    ctx: EvaluationContext,
    dim: QualityDimension,
    reference: str,
    candidate: str,
    backend: Backend,
    registry: PromptRegistry,
    n_samples: int,
    seed: int,
) -> ComparisonDistribution:
    template = registry.get(ctx.dataset_kind, "predict_bws")
    prompt = template.render(
        _predict_substitutions(
            ctx, dim, reference, candidate, template.placeholder_set
        )
    )
    hist = backend.sample_choice(prompt, COMPARISON_CHOICES, n_samples, seed)
    total = sum(hist.values())
    return ComparisonDistribution(
        p_better=hist["Better"] / total,
        p_worse=hist["Worse"] / total,
        p_similar=hist["Similar"] / total,
    )


def score_candidate(
    ctx: EvaluationContext,
    dim: QualityDimension,
    refset: SyntheticReferenceSet,
    candidate: str,
    backend: Backend,
    registry: PromptRegistry,
    variant: ScoreVariant = ScoreVariant.BWS_PROB,
    n_samples: int = DEFAULT_N_SAMPLES,
    seed: int = 0,
    similar_weight: float = 0.0,
) -> ScoreBreakdown:
    """Score one candidate against a full ladder.

    A failure on any rung aborts the candidate: a score aggregated over fewer
    rungs than n would not be the defined reduction.
    """
    if refset.context_id != ctx.context_id or refset.dimension != dim.name:
        raise ValueError(
            f"reference set for ({refset.context_id}, {refset.dimension}) does not "
            f"match ({ctx.context_id}, {dim.name})"
        )
    if variant is ScoreVariant.GEVAL_BASELINE:
        final = geval_score(ctx, dim, candidate, backend, registry)
        return ScoreBreakdown(per_reference=(), final=final, variant=variant)

    per_reference: list[tuple[int, ComparisonDistribution]] = []
    for i, reference in refset.references:
        if variant is ScoreVariant.BWS_PROB:
            dist = comparison_distribution(
                ctx, dim, reference, candidate, backend, registry
            )
        elif variant is ScoreVariant.YESNO_PROB:
            dist = _yesno_distribution(
                ctx, dim, reference, candidate, backend, registry
            )
        elif variant is ScoreVariant.SAMPLED:
            dist = _sampled_distribution(
                ctx,
                dim,
                reference,
                candidate,
                backend,
                registry,
                n_samples,
                derive_seed(seed, ctx.context_id, dim.name, i, "sampled"),
            )
        else:
            raise ValueError(f"unknown variant {variant}")
        per_reference.append((i, dist))
    final = direct_score(per_reference, refset.n, similar_weight)
    return ScoreBreakdown(
        per_reference=tuple(per_reference), final=final, variant=variant
    )


GEVAL_SCORE_RANGE = tuple(str(k) for k in range(1, 6))

_GEVAL_TASK_NOUN = {
    DatasetKind.SUMMARIZATION: ("news article", "summary"),
    DatasetKind.DIALOG: ("conversation", "response"),
    DatasetKind.STORY: ("story idea", "story"),
}


def _geval_prompt(
    ctx: EvaluationContext, dim: QualityDimension, candidate: str
) -> str:
    source_noun, target_noun = _GEVAL_TASK_NOUN[ctx.dataset_kind]
    return (
        f"You will be given a {source_noun} and one {target_noun} for it. "
        f"Your task is to rate the {target_noun} on one metric.\n\n"
        "Evaluation Criteria:\n"
        f"{dim.name} - {dim.description}\n\n"
        f"{source_noun.title()}:\n{ctx.context_text}\n\n"
        f"{target_noun.title()}:\n{candidate}\n\n"
        f"Rate the {target_noun} for {dim.name} on a scale of 1 to 5. "
        "Respond with only a single number."
    )


def geval_score(
    ctx: EvaluationContext,
    dim: QualityDimension,
    candidate: str,
    backend: Backend,
    registry: Optional[PromptRegistry] = None,
) -> float:
    """Direct-scoring baseline: expectation over the score strings themselves.

    Softmaxes the summed log-probs of the continuations "1".."5" and returns
    sum_k k * p(k).
    """
    if not candidate:
        raise ValueError("candidate must be non-empty")
    prompt = _geval_prompt(ctx, dim, candidate)
    scored = dict(
        backend.score_continuations(
            ContinuationScoreRequest(prompt=prompt, candidates=GEVAL_SCORE_RANGE)
        )
    )
    logs = [floor_log_weight(scored.get(k)) for k in GEVAL_SCORE_RANGE]
    m = max(logs)
    exps = [math.exp(x - m) for x in logs]
    z = sum(exps)
    return sum(int(k) * e / z for k, e in zip(GEVAL_SCORE_RANGE, exps))


def to_bounded_scale(final: float, n: int) -> float:
    """Affine map from [-n(n+1)/2, +n(n+1)/2] onto [1, n].

    For thresholding UIs only; meta-evaluation always uses the raw score
    (rank correlations are invariant to the mapping).
    """
    half = n * (n + 1) / 2
    return 1 + (final + half) * (n - 1) / (2 * half)
