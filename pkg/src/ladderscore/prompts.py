"""Prompt template registry with placeholder substitution.

Templates are external text assets with ``{{ name }}`` placeholders, listed in
a JSON manifest that declares each template's placeholder multiset. The
registry validates declared placeholders against the body at load time, so a
drifted asset fails fast rather than rendering garbage.

Twelve default templates ship: {summarization, dialog, story} x {extreme,
recursive, predict_bws, predict_yesno}. Alternate wordings are registered
under non-default variant tags and do not count toward the default set.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Mapping, Optional

from ladderscore.core import DatasetKind

PLACEHOLDER_RE = re.compile(r"\{\{\s*(\w+)\s*\}\}")

PURPOSES = ("extreme", "recursive", "predict_bws", "predict_yesno")


class TemplateError(Exception):
    """Unknown template id, or a render with a bad substitution map."""


TemplateId = tuple[DatasetKind, str, str]  # (dataset_kind, purpose, variant)


@dataclass(frozen=True)
class PromptTemplate:
    dataset_kind: DatasetKind
    purpose: str
    variant: str
    body: str
    placeholder_counts: Mapping[str, int]

    @property
    def template_id(self) -> TemplateId:
        return (self.dataset_kind, self.purpose, self.variant)

    @property
    def placeholder_set(self) -> frozenset[str]:
        return frozenset(self.placeholder_counts)

    def render(self, substitutions: Mapping[str, str]) -> str:
        """Replace every placeholder; byte-exact otherwise.

        Raises ``TemplateError`` naming any missing or extra placeholder, or
        any empty substitution value.
        """
        missing = self.placeholder_set - set(substitutions)
        if missing:
            raise TemplateError(
                f"missing substitution(s) {sorted(missing)} for {self.template_id}"
            )
        extra = set(substitutions) - self.placeholder_set
        if extra:
            raise TemplateError(
                f"unknown substitution(s) {sorted(extra)} for {self.template_id}"
            )
        empty = [k for k, v in substitutions.items() if not v]
        if empty:
            raise TemplateError(f"empty substitution value(s) {sorted(empty)}")
        return PLACEHOLDER_RE.sub(lambda m: substitutions[m.group(1)], self.body)

    def content_hash(self) -> str:
        """Stable hex digest of the raw body; changes iff the body changes."""
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()


class PromptRegistry:
    """Immutable-after-load collection of prompt templates."""

    def __init__(self, templates: list[PromptTemplate]):
        self._templates: dict[TemplateId, PromptTemplate] = {}
        for tpl in templates:
            if tpl.template_id in self._templates:
                raise TemplateError(f"duplicate template id {tpl.template_id}")
            self._templates[tpl.template_id] = tpl

    @classmethod
    def load_default(cls) -> "PromptRegistry":
        """Load the shipped assets from the package data directory."""
        root = resources.files("ladderscore") / "assets"
        return cls.load(Path(str(root)))

    @classmethod
    def load(cls, asset_dir: Path) -> "PromptRegistry":
        manifest = json.loads((asset_dir / "manifest.json").read_text("utf-8"))
        templates = []
        for entry in manifest["templates"]:
            body = (asset_dir / entry["file"]).read_text("utf-8")
            counts = {k: int(v) for k, v in entry["placeholders"].items()}
            found = Counter(PLACEHOLDER_RE.findall(body))
            if dict(found) != counts:
                raise TemplateError(
                    f"template {entry['file']}: declared placeholders {counts} "
                    f"do not match body {dict(found)}"
                )
            templates.append(
                PromptTemplate(
                    dataset_kind=DatasetKind(entry["dataset_kind"]),
                    purpose=entry["purpose"],
                    variant=entry.get("variant", "default"),
                    body=body,
                    placeholder_counts=counts,
                )
            )
        return cls(templates)

    def get(
        self, dataset_kind: DatasetKind, purpose: str, variant: str = "default"
    ) -> PromptTemplate:
        key = (dataset_kind, purpose, variant)
        if key not in self._templates:
            raise TemplateError(f"no template registered for {key}")
        return self._templates[key]

    def render(
        self,
        dataset_kind: DatasetKind,
        purpose: str,
        substitutions: Mapping[str, str],
        variant: str = "default",
    ) -> str:
        return self.get(dataset_kind, purpose, variant).render(substitutions)

    def template_hash(
        self, dataset_kind: DatasetKind, purpose: str, variant: str = "default"
    ) -> str:
        return self.get(dataset_kind, purpose, variant).content_hash()

    def default_templates(self) -> list[PromptTemplate]:
        return [t for t in self._templates.values() if t.variant == "default"]

    def all_templates(self) -> list[PromptTemplate]:
        return list(self._templates.values())

    def __len__(self) -> int:
        return len(self._templates)


_DIMENSIONS: Optional[dict] = None


def dimension_description(dataset_kind: DatasetKind, name: str) -> str:
    """Look up the shipped plain-text description for an evaluation axis."""
    global _DIMENSIONS
    if _DIMENSIONS is None:
        path = resources.files("ladderscore") / "assets" / "dimensions.json"
        _DIMENSIONS = json.loads(path.read_text("utf-8"))
    per_kind = _DIMENSIONS.get(dataset_kind.value, {})
    if name not in per_kind:
        raise KeyError(
            f"no shipped description for axis {name!r} on {dataset_kind.value}; "
            f"known axes: {sorted(per_kind)}"
        )
    return per_kind[name]


def configured_axes(dataset_kind: DatasetKind) -> list[str]:
    global _DIMENSIONS
    if _DIMENSIONS is None:
        path = resources.files("ladderscore") / "assets" / "dimensions.json"
        _DIMENSIONS = json.loads(path.read_text("utf-8"))
    return sorted(_DIMENSIONS.get(dataset_kind.value, {}))
