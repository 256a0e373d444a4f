"""Build a ladder of synthetic reference texts for a (context, dimension).

Extremes first (scores 1 and n), then intermediates by recursive bisection of
the score range, so the two parents of every intermediate already exist when
it is generated. For n=5 the order is [1, 5, 3, 2, 4].
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Optional

from ladderscore.backend import Backend, GenerationRequest, SamplingParams, derive_seed
from ladderscore.core import (
    DatasetKind,
    EvaluationContext,
    GenerationProvenance,
    QualityDimension,
    SyntheticReferenceSet,
)
from ladderscore.prompts import PromptRegistry

log = logging.getLogger(__name__)

# Placeholder carrying the source item, per dataset kind.
CONTEXT_PLACEHOLDER = {
    DatasetKind.SUMMARIZATION: "article",
    DatasetKind.DIALOG: "context",
    DatasetKind.STORY: "story_prompt",
}


@dataclass(frozen=True)
class PlanStep:
    """One generation step: a score, and for intermediates its two parents."""

    score: int
    parents: Optional[tuple[int, int]] = None


@dataclass(frozen=True)
class GenerationPlan:
    n: int
    steps: tuple[PlanStep, ...]

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("plan needs n >= 2")
        scores = [s.score for s in self.steps]
        if sorted(scores) != list(range(1, self.n + 1)):
            raise ValueError("plan must cover scores 1..n exactly")
        if self.steps[0].parents is not None or self.steps[1].parents is not None:
            raise ValueError("first two steps must be the parentless extremes")
        if {self.steps[0].score, self.steps[1].score} != {1, self.n}:
            raise ValueError("first two steps must be scores 1 and n")
        seen = {self.steps[0].score, self.steps[1].score}
        for step in self.steps[2:]:
            if step.parents is None:
                raise ValueError(f"intermediate score {step.score} lacks parents")
            lo, hi = step.parents
            if lo not in seen or hi not in seen:
                raise ValueError(
                    f"score {step.score} generated before its parents {step.parents}"
                )
            seen.add(step.score)

    @property
    def order(self) -> tuple[int, ...]:
        return tuple(s.score for s in self.steps)


def make_plan(n: int) -> GenerationPlan:
    """Deterministic generation plan: extremes, then bisection.

    Intermediates come from a preorder traversal of the score range, lower
    half first, each taking the midpoint (rounded down, so even-width gaps
    break toward the lower side) of an already-generated pair.
    """
    if n < 2:
        raise ValueError(f"ladder size must be >= 2, got {n}")
    steps = [PlanStep(1), PlanStep(n)]

    def bisect(lo: int, hi: int) -> None:
        if hi - lo < 2:
            return
        mid = (lo + hi) // 2
        steps.append(PlanStep(mid, parents=(lo, hi)))
        bisect(lo, mid)
        bisect(mid, hi)

    bisect(1, n)
    return GenerationPlan(n=n, steps=tuple(steps))


def _generate(
    backend: Backend,
    prompt: str,
    sampling: SamplingParams,
    seed: int,
    max_new_tokens: int,
) -> str:
    req = GenerationRequest(
        prompt=prompt,
        max_new_tokens=max_new_tokens,
        sampling=SamplingParams(
            temperature=sampling.temperature, top_p=sampling.top_p, seed=seed
        ),
    )
    return backend.generate(req)


def gen_extreme(
    ctx: EvaluationContext,
    dim: QualityDimension,
    which: str,
    backend: Backend,
    registry: PromptRegistry,
    sampling: SamplingParams = SamplingParams(),
    seed: int = 0,
    max_new_tokens: int = 512,
) -> str:
    """Generate the worst or best possible text for the context/dimension."""
    if which not in ("worst", "best"):
        raise ValueError(f"which must be 'worst' or 'best', got {which!r}")
    prompt = registry.render(
        ctx.dataset_kind,
        "extreme",
        {
            "worst_best": which,
            "col_title": dim.name,
            "col_description": dim.description,
            CONTEXT_PLACEHOLDER[ctx.dataset_kind]: ctx.context_text,
        },
    )
    return _generate(backend, prompt, sampling, seed, max_new_tokens)


def gen_intermediate(
    ctx: EvaluationContext,
    dim: QualityDimension,
    worse: str,
    better: str,
    backend: Backend,
    registry: PromptRegistry,
    sampling: SamplingParams = SamplingParams(),
    seed: int = 0,
    max_new_tokens: int = 512,
) -> str:
    """Generate a text of quality between two existing references."""
    if not worse or not better:
        raise ValueError("both parent texts must be non-empty")
    prompt = registry.render(
        ctx.dataset_kind,
        "recursive",
        {
            "col_title": dim.name,
            "col_description": dim.description,
            "worse_summary": worse,
            "better_summary": better,
            CONTEXT_PLACEHOLDER[ctx.dataset_kind]: ctx.context_text,
        },
    )
    return _generate(backend, prompt, sampling, seed, max_new_tokens)


def build_reference_set(
    ctx: EvaluationContext,
    dim: QualityDimension,
    n: int,
    backend: Backend,
    registry: PromptRegistry,
    sampling: SamplingParams = SamplingParams(),
    seed: int = 0,
    max_new_tokens: int = 512,
) -> SyntheticReferenceSet:
    """Run the full plan for one (context, dimension); n backend calls.

    Any sub-call error aborts the whole set; no partial ladders are returned.
    Generation within one set is strictly sequential because every
    intermediate depends on its parents.
    """
    plan = make_plan(n)
    texts: dict[int, str] = {}
    for step in plan.steps:
        step_seed = derive_seed(seed, ctx.context_id, dim.name, n, step.score)
        if step.parents is None:
            which = "worst" if step.score == 1 else "best"
            texts[step.score] = gen_extreme(
                ctx, dim, which, backend, registry, sampling, step_seed, max_new_tokens
            )
        else:
            lo, hi = step.parents
            text = gen_intermediate(
                ctx,
                dim,
                texts[lo],
                texts[hi],
                backend,
                registry,
                sampling,
                step_seed,
                max_new_tokens,
            )
            if text in (texts[lo], texts[hi]):
                log.warning(
                    "intermediate score %d for (%s, %s) is identical to a parent",
                    step.score,
                    ctx.context_id,
                    dim.name,
                )
            texts[step.score] = text
    provenance = GenerationProvenance(
        model=backend.descriptor.model_name,
        template_hashes={
            "extreme": registry.template_hash(ctx.dataset_kind, "extreme"),
            "recursive": registry.template_hash(ctx.dataset_kind, "recursive"),
        },
        generation_order=plan.order,
        temperature=sampling.temperature,
        top_p=sampling.top_p,
        seed=seed,
    )
    return SyntheticReferenceSet(
        context_id=ctx.context_id,
        dimension=dim.name,
        n=n,
        references=tuple((score, texts[score]) for score in range(1, n + 1)),
        provenance=provenance,
    )


def reference_set_rows(dataset: str, refset: SyntheticReferenceSet) -> list[dict]:
    """The release JSONL rows for one ladder, one object per reference."""
    prov = refset.provenance
    return [
        {
            "dataset": dataset,
            "context_id": refset.context_id,
            "dimension": refset.dimension,
            "score": score,
            "n": refset.n,
            "text": text,
            "model": prov.model,
            "template_hash": prov.template_hashes["extreme"]
            if score in (1, refset.n)
            else prov.template_hashes["recursive"],
            "generation_order": list(prov.generation_order),
            "temperature": prov.temperature,
            "top_p": prov.top_p,
            "seed": prov.seed,
        }
        for score, text in refset.references
    ]


def rows_to_reference_set(rows: list[dict]) -> SyntheticReferenceSet:
    """Rebuild a ladder from its release rows (inverse of reference_set_rows)."""
    if not rows:
        raise ValueError("no rows")
    head = rows[0]
    hashes: dict[str, str] = {}
    for row in rows:
        kind = "extreme" if row["score"] in (1, row["n"]) else "recursive"
        hashes[kind] = row["template_hash"]
    provenance = GenerationProvenance(
        model=head["model"],
        template_hashes=hashes,
        generation_order=tuple(head["generation_order"]),
        temperature=head["temperature"],
        top_p=head["top_p"],
        seed=head["seed"],
    )
    return SyntheticReferenceSet(
        context_id=head["context_id"],
        dimension=head["dimension"],
        n=head["n"],
        references=tuple(
            sorted(((row["score"], row["text"]) for row in rows))
        ),
        provenance=provenance,
    )


def write_reference_jsonl(
    path: Path, dataset: str, refsets: Iterable[SyntheticReferenceSet]
) -> None:
    with path.open("w", encoding="utf-8") as fh:
        for refset in refsets:
            for row in reference_set_rows(dataset, refset):
                fh.write(json.dumps(row, ensure_ascii=False, sort_keys=True) + "\n")


def read_reference_jsonl(path: Path) -> dict[tuple[str, str], SyntheticReferenceSet]:
    """Load a release file back into ladders keyed by (context_id, dimension)."""
    grouped: dict[tuple[str, str], list[dict]] = {}
    with path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            grouped.setdefault((row["context_id"], row["dimension"]), []).append(row)
    return {key: rows_to_reference_set(rows) for key, rows in grouped.items()}
