"""Dataset adapters: normalize public benchmark files into core records.

Three adapters ship, one per dataset kind:

* ``ingest_summeval`` reads the SummEval expert-annotation JSONL
  (``model_annotations.aligned.paired.jsonl``): one object per (document,
  system) with ``id``, ``model_id``, ``decoded``, and ``expert_annotations``
  as a list of per-annotator dicts over coherence / consistency / fluency /
  relevance.
* ``ingest_topicalchat`` reads the USR-style TopicalChat human-evaluation
  JSON: a list of items with ``context`` and ``responses``, each response
  carrying per-annotator score lists keyed "Natural" / "Engaging" /
  "Overall".
* ``ingest_hanna`` reads the HANNA story-annotation CSV: one row per
  (story, annotator) with "Story ID", "Prompt", "Story", "Model" and the
  axis columns, of which Coherence / Surprise / Complexity are kept.

Annotator scores are averaged per (document, system, dimension) by default;
``per_annotator=False`` is the only mode the rest of the pipeline consumes,
but raw per-annotator rows can be requested for custom analyses.
"""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ladderscore.core import (
    AnnotatedRecord,
    CandidateText,
    DatasetKind,
    EvaluationContext,
)

log = logging.getLogger(__name__)

SUMMEVAL_ANNOTATIONS_URL = (
    "https://storage.googleapis.com/sfr-summarization-repo-research/"
    "model_annotations.aligned.paired.jsonl"
)
SUMMEVAL_PATH_ENV = "SUMMEVAL_ANNOTATIONS_PATH"

SUMMEVAL_AXES = ("coherence", "consistency", "fluency", "relevance")
TOPICALCHAT_AXES = {
    "Natural": "naturalness",
    "Engaging": "engagingness",
    "Overall": "overall",
}
HANNA_AXES = {"Coherence": "coherence", "Surprise": "surprise", "Complexity": "complexity"}

# Source texts are not redistributed with some annotation files; a stub keeps
# the context type valid while making the absence loud downstream.
MISSING_CONTEXT_STUB = "[source text not included in annotation file]"


class SchemaError(ValueError):
    """Input file violates the adapter's documented layout."""

    def __init__(self, message: str, locator: str):
        super().__init__(f"{locator}: {message}")
        self.locator = locator


@dataclass
class NormalizedDataset:
    """The adapter output every downstream stage consumes."""

    dataset_kind: DatasetKind
    name: str
    contexts: dict[str, EvaluationContext] = field(default_factory=dict)
    candidates: dict[tuple[str, str], CandidateText] = field(default_factory=dict)
    human: dict[tuple[str, str, str], float] = field(default_factory=dict)

    @property
    def dimensions(self) -> list[str]:
        return sorted({dim for _, _, dim in self.human})

    @property
    def system_ids(self) -> list[str]:
        return sorted({sys for _, sys in self.candidates})

    def records(self) -> list[AnnotatedRecord]:
        out = []
        for (ctx_id, sys_id), cand in sorted(self.candidates.items()):
            scores = {
                dim: value
                for (c, s, dim), value in self.human.items()
                if c == ctx_id and s == sys_id
            }
            out.append(AnnotatedRecord(self.contexts[ctx_id], cand, scores))
        return out

    def axis_grids(self) -> dict[str, dict[tuple[str, str], float]]:
        """Human scores regrouped per axis, for axis-correlation analysis."""
        grids: dict[str, dict[tuple[str, str], float]] = {}
        for (ctx_id, sys_id, dim), value in self.human.items():
            grids.setdefault(dim, {})[(ctx_id, sys_id)] = value
        return grids


def _mean(values: list[float]) -> float:
    return float(np.mean(values))


def ingest_summeval(path: str | Path, per_annotator: bool = False) -> NormalizedDataset:
    """Parse the SummEval expert annotations into a normalized dataset.

    With ``per_annotator`` the returned human table is keyed by dimension
    names suffixed ``#<annotator index>`` instead of averaged.
    """
    ds = NormalizedDataset(DatasetKind.SUMMARIZATION, "summeval")
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            locator = f"{path}:{lineno}"
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc}", locator)
            for key in ("id", "model_id", "decoded", "expert_annotations"):
                if key not in obj:
                    raise SchemaError(f"missing field {key!r}", locator)
            ctx_id = str(obj["id"])
            sys_id = str(obj["model_id"])
            text = obj.get("text") or MISSING_CONTEXT_STUB
            ds.contexts.setdefault(
                ctx_id,
                EvaluationContext(DatasetKind.SUMMARIZATION, ctx_id, text),
            )
            ds.candidates[(ctx_id, sys_id)] = CandidateText(sys_id, obj["decoded"])
            annotations = obj["expert_annotations"]
            if not annotations:
                raise SchemaError("empty expert_annotations", locator)
            for axis in SUMMEVAL_AXES:
                values = []
                for ann in annotations:
                    if axis not in ann:
                        raise SchemaError(
                            f"annotator entry missing field {axis!r}", locator
                        )
                    values.append(float(ann[axis]))
                if per_annotator:
                    for k, v in enumerate(values):
                        ds.human[(ctx_id, sys_id, f"{axis}#{k}")] = v
                else:
                    ds.human[(ctx_id, sys_id, axis)] = _mean(values)
    return ds


def ingest_topicalchat(path: str | Path, per_annotator: bool = False) -> NormalizedDataset:
    """Parse USR-style TopicalChat human evaluations."""
    ds = NormalizedDataset(DatasetKind.DIALOG, "topicalchat")
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, list):
        raise SchemaError("expected a top-level list", str(path))
    for idx, item in enumerate(raw):
        locator = f"{path}[{idx}]"
        if "context" not in item or "responses" not in item:
            raise SchemaError("item missing 'context' or 'responses'", locator)
        ctx_id = f"tc-{idx:04d}"
        ds.contexts[ctx_id] = EvaluationContext(
            DatasetKind.DIALOG, ctx_id, item["context"]
        )
        for response in item["responses"]:
            if "model" not in response or "response" not in response:
                raise SchemaError("response missing 'model' or 'response'", locator)
            sys_id = str(response["model"])
            ds.candidates[(ctx_id, sys_id)] = CandidateText(
                sys_id, response["response"]
            )
            for raw_axis, axis in TOPICALCHAT_AXES.items():
                if raw_axis not in response:
                    raise SchemaError(f"response missing field {raw_axis!r}", locator)
                values = [float(v) for v in response[raw_axis]]
                if per_annotator:
                    for k, v in enumerate(values):
                        ds.human[(ctx_id, sys_id, f"{axis}#{k}")] = v
                else:
                    ds.human[(ctx_id, sys_id, axis)] = _mean(values)
    return ds


def ingest_hanna(path: str | Path, per_annotator: bool = False) -> NormalizedDataset:
    """Parse the HANNA story-annotation CSV."""
    ds = NormalizedDataset(DatasetKind.STORY, "hanna")
    grouped: dict[tuple[str, str], dict[str, list[float]]] = {}
    with Path(path).open(encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        required = {"Story ID", "Prompt", "Story", "Model", *HANNA_AXES}
        missing = required - set(reader.fieldnames or ())
        if missing:
            raise SchemaError(f"missing column(s) {sorted(missing)}", str(path))
        for lineno, row in enumerate(reader, start=2):
            locator = f"{path}:{lineno}"
            ctx_id = str(row["Story ID"])
            sys_id = str(row["Model"])
            ds.contexts.setdefault(
                ctx_id, EvaluationContext(DatasetKind.STORY, ctx_id, row["Prompt"])
            )
            ds.candidates[(ctx_id, sys_id)] = CandidateText(sys_id, row["Story"])
            axes = grouped.setdefault((ctx_id, sys_id), {})
            for raw_axis, axis in HANNA_AXES.items():
                try:
                    axes.setdefault(axis, []).append(float(row[raw_axis]))
                except ValueError:
                    raise SchemaError(
                        f"non-numeric {raw_axis!r} value {row[raw_axis]!r}", locator
                    )
    for (ctx_id, sys_id), axes in grouped.items():
        for axis, values in axes.items():
            if per_annotator:
                for k, v in enumerate(values):
                    ds.human[(ctx_id, sys_id, f"{axis}#{k}")] = v
            else:
                ds.human[(ctx_id, sys_id, axis)] = _mean(values)
    return ds


INGESTORS = {
    DatasetKind.SUMMARIZATION: ingest_summeval,
    DatasetKind.DIALOG: ingest_topicalchat,
    DatasetKind.STORY: ingest_hanna,
}


def write_canonical(ds: NormalizedDataset, rows_path: Path, contexts_path: Path) -> None:
    """Serialize to the canonical normalized format.

    One JSONL object per (context, system, dimension); context text stored
    once in a sidecar file keyed by context_id.
    """
    with contexts_path.open("w", encoding="utf-8") as fh:
        for ctx_id in sorted(ds.contexts):
            ctx = ds.contexts[ctx_id]
            fh.write(
                json.dumps(
                    {
                        "context_id": ctx_id,
                        "dataset_kind": ctx.dataset_kind.value,
                        "context_text": ctx.context_text,
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )
    with rows_path.open("w", encoding="utf-8") as fh:
        for (ctx_id, sys_id, dim) in sorted(ds.human):
            fh.write(
                json.dumps(
                    {
                        "dataset": ds.name,
                        "context_id": ctx_id,
                        "system_id": sys_id,
                        "dimension": dim,
                        "candidate_text": ds.candidates[(ctx_id, sys_id)].text,
                        "human_score": ds.human[(ctx_id, sys_id, dim)],
                    },
                    ensure_ascii=False,
                    sort_keys=True,
                )
                + "\n"
            )


def read_canonical(
    rows_path: Path, contexts_path: Path, dataset_kind: DatasetKind, name: str
) -> NormalizedDataset:
    ds = NormalizedDataset(dataset_kind, name)
    with contexts_path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            ds.contexts[obj["context_id"]] = EvaluationContext(
                DatasetKind(obj["dataset_kind"]),
                obj["context_id"],
                obj["context_text"],
            )
    with rows_path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            obj = json.loads(line)
            key = (obj["context_id"], obj["system_id"])
            ds.candidates[key] = CandidateText(obj["system_id"], obj["candidate_text"])
            ds.human[(obj["context_id"], obj["system_id"], obj["dimension"])] = float(
                obj["human_score"]
            )
    return ds


def locate_summeval_annotations(download_dir: Optional[Path] = None) -> Path:
    """Find (or fetch) the public SummEval expert-annotation file.

    Resolution order: the ``SUMMEVAL_ANNOTATIONS_PATH`` environment variable,
    ``<download_dir>/model_annotations.aligned.paired.jsonl`` if present, then
    a download from the public release URL into ``download_dir``.
    """
    import os

    env = os.environ.get(SUMMEVAL_PATH_ENV)
    if env:
        p = Path(env)
        if not p.exists():
            raise FileNotFoundError(f"{SUMMEVAL_PATH_ENV} points to missing {p}")
        return p
    download_dir = download_dir or Path("data")
    target = download_dir / "model_annotations.aligned.paired.jsonl"
    if target.exists():
        return target
    download_dir.mkdir(parents=True, exist_ok=True)
    log.info("downloading SummEval annotations to %s", target)
    import requests

    resp = requests.get(SUMMEVAL_ANNOTATIONS_URL, timeout=120)
    resp.raise_for_status()
    target.write_bytes(resp.content)
    return target
