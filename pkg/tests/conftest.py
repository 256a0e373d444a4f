import csv
import json

import pytest

from ladderscore.core import DatasetKind, EvaluationContext, QualityDimension
from ladderscore.prompts import PromptRegistry, dimension_description

SUMMEVAL_DIMS = ("coherence", "consistency", "fluency", "relevance")
SYSTEMS = ("M0", "M1", "M2")


@pytest.fixture(scope="session")
def registry():
    return PromptRegistry.load_default()


@pytest.fixture
def article_ctx():
    return EvaluationContext(
        DatasetKind.SUMMARIZATION,
        "doc-0",
        "The council voted on Tuesday to expand the park by twelve acres.",
    )


@pytest.fixture
def coherence_dim():
    return QualityDimension(
        "coherence", dimension_description(DatasetKind.SUMMARIZATION, "coherence")
    )


def _expert(scores):
    return {dim: score for dim, score in zip(SUMMEVAL_DIMS, scores)}


@pytest.fixture
def summeval_fixture(tmp_path):
    """A 2-document x 3-system SummEval-layout annotation file."""
    path = tmp_path / "summeval_fixture.jsonl"
    rows = []
    for d, doc in enumerate(("doc-0", "doc-1")):
        for m, system in enumerate(SYSTEMS):
            rows.append(
                {
                    "id": doc,
                    "model_id": system,
                    "decoded": f"summary from {system} for {doc}",
                    "text": f"source article body for {doc}",
                    "expert_annotations": [
                        _expert([2 + m, 3 + m, 5 - m, 1 + m + d]),
                        _expert([3 + m, 3 + m, 4 - m, 2 + m + d]),
                    ],
                    "turker_annotations": [],
                }
            )
    with path.open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row) + "\n")
    return path


@pytest.fixture
def topicalchat_fixture(tmp_path):
    path = tmp_path / "topicalchat_fixture.json"
    items = []
    for i in range(2):
        items.append(
            {
                "context": f"A: hello there {i}\nB: hi, how are you?",
                "fact": "some fact",
                "responses": [
                    {
                        "response": f"response {j} to context {i}",
                        "model": f"sys-{j}",
                        "Natural": [1 + j, 2 + j],
                        "Engaging": [3 - j, 2],
                        "Overall": [2 + j, 3],
                    }
                    for j in range(3)
                ],
            }
        )
    path.write_text(json.dumps(items), encoding="utf-8")
    return path


@pytest.fixture
def hanna_fixture(tmp_path):
    path = tmp_path / "hanna_fixture.csv"
    fieldnames = [
        "Story ID",
        "Prompt",
        "Human",
        "Story",
        "Model",
        "Relevance",
        "Coherence",
        "Empathy",
        "Surprise",
        "Engagement",
        "Complexity",
    ]
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=fieldnames)
        writer.writeheader()
        for story in range(2):
            for model in ("gpt", "fusion"):
                for annotator in range(2):
                    writer.writerow(
                        {
                            "Story ID": f"story-{story}",
                            "Prompt": f"a story idea {story}",
                            "Human": "no",
                            "Story": f"story text by {model} for {story}",
                            "Model": model,
                            "Relevance": 3,
                            "Coherence": 2 + annotator + story,
                            "Empathy": 3,
                            "Surprise": 4 - annotator,
                            "Engagement": 3,
                            "Complexity": 1 + annotator,
                        }
                    )
    return path
