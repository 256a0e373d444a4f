"""Command-line entry point for the four workflows.

Subcommands: ``generate`` (build reference ladders), ``score`` (score
candidates against them), ``metaeval`` (correlate with human judgments),
``axis-corr`` (human axis cross-correlations), and ``validate`` (dataset
lint). Configuration comes from a TOML file with flag overrides; flags win.
API credentials are only ever read from the environment variable named in
the config.

Every command is idempotent given a warm cache and a fixed seed: reruns
issue no backend calls and rewrite byte-identical outputs. All randomness
derives from the single config seed via per-item hashing, so results do not
depend on execution order.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Optional, Sequence, TypeVar

import click

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ladderscore import adapters, metaeval, scorer, synthgen
from ladderscore.backend import (
    Backend,
    BackendDescriptor,
    BackendKind,
    MockBackend,
    OpenAICompatibleBackend,
    SamplingParams,
)
from ladderscore.cache import Cache, CacheKey, CacheNamespace
from ladderscore.core import (
    DatasetKind,
    QualityDimension,
    MetaEvalRecord,
    validate_dataset,
)
from ladderscore.prompts import PromptRegistry, dimension_description

log = logging.getLogger(__name__)

K = TypeVar("K")
V = TypeVar("V")


@dataclass(frozen=True)
class RunConfig:
    backend_kind: BackendKind
    model: str
    dataset_kind: DatasetKind
    dataset_path: str
    seed: int
    endpoint: Optional[str] = None
    api_key_env: Optional[str] = None
    mock_table: Optional[str] = None
    concurrency_limit: int = 1
    dimensions: tuple[str, ...] = ()
    n: int = 5
    variant: scorer.ScoreVariant = scorer.ScoreVariant.BWS_PROB
    n_samples: int = scorer.DEFAULT_N_SAMPLES
    temperature: float = 1.0
    top_p: float = 0.95
    cache_dir: str = ".ladderscore-cache"
    out_dir: str = "out"
    impute_zero: bool = False
    levels: tuple[metaeval.CorrelationLevel, ...] = (
        metaeval.CorrelationLevel.SAMPLE,
    )

    def __post_init__(self) -> None:
        if self.n < 2:
            raise ValueError("ladder size n must be >= 2")

    @property
    def sampling(self) -> SamplingParams:
        return SamplingParams(self.temperature, self.top_p, self.seed)


def load_config(path: str | Path, overrides: Optional[dict] = None) -> RunConfig:
    """Parse a TOML config file; non-None overrides win over file values."""
    raw = tomllib.loads(Path(path).read_text(encoding="utf-8"))
    backend = raw.get("backend", {})
    dataset = raw.get("dataset", {})
    run = raw.get("run", {})
    values = {
        "backend_kind": BackendKind(backend.get("kind", "mock")),
        "model": backend.get("model", "mock"),
        "endpoint": backend.get("endpoint"),
        "api_key_env": backend.get("api_key_env"),
        "mock_table": backend.get("mock_table"),
        "concurrency_limit": int(backend.get("concurrency_limit", 1)),
        "dataset_kind": DatasetKind(dataset["kind"]),
        "dataset_path": dataset["path"],
        "dimensions": tuple(run.get("dimensions", ())),
        "n": int(run.get("n", 5)),
        "variant": scorer.ScoreVariant(run.get("variant", "bws_prob")),
        "n_samples": int(run.get("n_samples", scorer.DEFAULT_N_SAMPLES)),
        "seed": int(run["seed"]),
        "temperature": float(run.get("temperature", 1.0)),
        "top_p": float(run.get("top_p", 0.95)),
        "cache_dir": run.get("cache_dir", ".ladderscore-cache"),
        "out_dir": run.get("out_dir", "out"),
        "impute_zero": bool(run.get("impute_zero", False)),
        "levels": tuple(
            metaeval.CorrelationLevel(lv) for lv in run.get("levels", ["sample"])
        ),
    }
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return RunConfig(**values)


def build_backend(config: RunConfig) -> Backend:
    if config.backend_kind is BackendKind.MOCK:
        if config.mock_table:
            return MockBackend.from_table_file(config.mock_table)
        return MockBackend(seed=config.seed)
    descriptor = BackendDescriptor(
        kind=BackendKind.OPENAI_COMPATIBLE_HTTP,
        model_name=config.model,
        endpoint=config.endpoint,
        concurrency_limit=config.concurrency_limit,
    )
    return OpenAICompatibleBackend(descriptor, api_key_env=config.api_key_env)


def _dimensions(config: RunConfig) -> list[QualityDimension]:
    names = config.dimensions
    if not names:
        raise ValueError("no dimensions configured")
    return [
        QualityDimension(name, dimension_description(config.dataset_kind, name))
        for name in names
    ]


def _ingest(config: RunConfig) -> adapters.NormalizedDataset:
    return adapters.INGESTORS[config.dataset_kind](config.dataset_path)


def _map_items(
    items: Sequence[K], fn: Callable[[K], V], workers: int
) -> dict[K, V]:
    """Run fn over items with a bounded pool; results keyed, not ordered."""
    if workers <= 1 or len(items) <= 1:
        return {item: fn(item) for item in items}
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return dict(zip(items, pool.map(fn, items)))


def _reference_key(config: RunConfig, registry: PromptRegistry,
                   dataset: str, context_id: str, dimension: str) -> CacheKey:
    return CacheKey.make(
        CacheNamespace.REFERENCE_SET,
        dataset=dataset,
        context_id=context_id,
        dimension=dimension,
        n=config.n,
        model=config.model,
        extreme_hash=registry.template_hash(config.dataset_kind, "extreme"),
        recursive_hash=registry.template_hash(config.dataset_kind, "recursive"),
        temperature=config.temperature,
        top_p=config.top_p,
        seed=config.seed,
    )


def run_generate(
    config: RunConfig, backend: Optional[Backend] = None
) -> list[tuple[str, str, str]]:
    """Build one reference ladder per (context, dimension); resumable.

    Returns the per-item failure manifest (context_id, dimension, error).
    """
    backend = backend or build_backend(config)
    registry = PromptRegistry.load_default()
    cache = Cache(config.cache_dir)
    ds = _ingest(config)
    dims = _dimensions(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    items = [
        (ctx_id, dim) for ctx_id in sorted(ds.contexts) for dim in dims
    ]
    failures: list[tuple[str, str, str]] = []

    def build(item: tuple[str, QualityDimension]):
        ctx_id, dim = item
        key = _reference_key(config, registry, ds.name, ctx_id, dim.name)
        cached = cache.get(key)
        if cached is not None:
            return synthgen.rows_to_reference_set(cached)
        refset = synthgen.build_reference_set(
            ds.contexts[ctx_id],
            dim,
            config.n,
            backend,
            registry,
            sampling=config.sampling,
            seed=config.seed,
        )
        cache.put(key, synthgen.reference_set_rows(ds.name, refset))
        return refset

    refsets = {}
    for item, result in _map_items(
        items, lambda it: _try(build, it), config.concurrency_limit
    ).items():
        ctx_id, dim = item
        if isinstance(result, Exception):
            failures.append((ctx_id, dim.name, repr(result)))
        else:
            refsets[(ctx_id, dim.name)] = result

    export = out_dir / "references.jsonl"
    synthgen.write_reference_jsonl(
        export, ds.name, [refsets[k] for k in sorted(refsets)]
    )
    if failures:
        (out_dir / "generate_failures.json").write_text(
            json.dumps(
                [{"context_id": c, "dimension": d, "error": e} for c, d, e in failures],
                indent=2,
                sort_keys=True,
            ),
            encoding="utf-8",
        )
    return failures


def _try(fn, *args):
    try:
        return fn(*args)
    except Exception as exc:  # collected into the failure manifest
        return exc


def run_score(
    config: RunConfig, backend: Optional[Backend] = None
) -> list[tuple[str, str, str, str]]:
    """Score every (context, system, dimension); returns the failure manifest."""
    backend = backend or build_backend(config)
    registry = PromptRegistry.load_default()
    cache = Cache(config.cache_dir)
    ds = _ingest(config)
    dims = _dimensions(config)
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    items = [
        (ctx_id, sys_id, dim)
        for (ctx_id, sys_id) in sorted(ds.candidates)
        for dim in dims
    ]
    failures: list[tuple[str, str, str, str]] = []

    def score_one(item):
        ctx_id, sys_id, dim = item
        ref_key = _reference_key(config, registry, ds.name, ctx_id, dim.name)
        cached_refs = cache.get(ref_key)
        if cached_refs is None:
            raise FileNotFoundError(
                f"no reference set for ({ctx_id}, {dim.name}); run generate first"
            )
        refset = synthgen.rows_to_reference_set(cached_refs)
        candidate = ds.candidates[(ctx_id, sys_id)]
        score_key = CacheKey.make(
            CacheNamespace.CONTINUATION_SCORES,
            dataset=ds.name,
            context_id=ctx_id,
            system_id=sys_id,
            dimension=dim.name,
            variant=config.variant.value,
            n=config.n,
            n_samples=config.n_samples,
            model=config.model,
            seed=config.seed,
            candidate=candidate.text,
        )
        cached = cache.get(score_key)
        if cached is not None:
            return cached[0]
        breakdown = scorer.score_candidate(
            ds.contexts[ctx_id],
            dim,
            refset,
            candidate.text,
            backend,
            registry,
            variant=config.variant,
            n_samples=config.n_samples,
            seed=config.seed,
        )
        row = {
            "dataset": ds.name,
            "context_id": ctx_id,
            "system_id": sys_id,
            "dimension": dim.name,
            "variant": breakdown.variant.value,
            "final": breakdown.final,
            "per_reference": [
                {
                    "score": i,
                    "p_better": d.p_better,
                    "p_worse": d.p_worse,
                    "p_similar": d.p_similar,
                }
                for i, d in breakdown.per_reference
            ],
        }
        cache.put(score_key, [row])
        return row

    rows = {}
    for item, result in _map_items(
        items, lambda it: _try(score_one, it), config.concurrency_limit
    ).items():
        ctx_id, sys_id, dim = item
        if isinstance(result, Exception):
            failures.append((ctx_id, sys_id, dim.name, repr(result)))
        else:
            rows[(ctx_id, sys_id, dim.name)] = result

    with (out_dir / "scores.jsonl").open("w", encoding="utf-8") as fh:
        for key in sorted(rows):
            fh.write(json.dumps(rows[key], sort_keys=True, ensure_ascii=False) + "\n")
    if failures:
        (out_dir / "score_failures.json").write_text(
            json.dumps(
                [
                    {"context_id": c, "system_id": s, "dimension": d, "error": e}
                    for c, s, d, e in failures
                ],
                indent=2,
                sort_keys=True,
            ),
            encoding="utf-8",
        )
    return failures


def _report_to_dict(report: metaeval.CorrelationReport) -> dict:
    return {
        "dataset": report.dataset,
        "dimension": report.dimension,
        "level": report.level.value,
        "coefficient": report.coefficient_kind.value,
        "value": report.value,
        "skipped_count": report.skipped_count,
        "per_document": [
            {"context_id": p.context_id, "rho": p.rho, "skipped": p.skipped}
            for p in report.per_document
        ],
    }


def run_metaeval(config: RunConfig) -> dict:
    """Correlate score rows with human annotations at the requested levels."""
    ds = _ingest(config)
    out_dir = Path(config.out_dir)
    scores_path = out_dir / "scores.jsonl"
    if not scores_path.exists():
        raise FileNotFoundError(f"{scores_path} not found; run score first")
    predictions: dict[tuple[str, str, str], float] = {}
    with scores_path.open(encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = json.loads(line)
            predictions[(row["context_id"], row["system_id"], row["dimension"])] = row[
                "final"
            ]
    orphans = sorted(set(predictions) - set(ds.human))
    missing = sorted(
        k for k in ds.human if k[2] in config.dimensions and k not in predictions
    )
    if orphans or missing:
        raise ValueError(
            f"score/annotation alignment mismatch; orphan predictions {orphans[:5]}, "
            f"missing predictions {missing[:5]}"
        )

    reports = []
    for dim_name in config.dimensions:
        records = [
            MetaEvalRecord(c, s, d, predictions[(c, s, d)], ds.human[(c, s, d)])
            for (c, s, d) in sorted(predictions)
            if d == dim_name
        ]
        for level in config.levels:
            fn = metaeval.LEVEL_FUNCTIONS[level]
            kwargs = {"dataset": ds.name}
            if level is metaeval.CorrelationLevel.SAMPLE:
                kwargs["impute_zero"] = config.impute_zero
            reports.append(fn(records, **kwargs))

    result = {"reports": [_report_to_dict(r) for r in reports]}
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "metaeval.json").write_text(
        json.dumps(result, indent=2, sort_keys=True), encoding="utf-8"
    )
    # Flat table: one row per level, dimensions as columns plus their mean.
    with (out_dir / "metaeval.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        dims = list(config.dimensions)
        writer.writerow(["level", *dims, "AVG"])
        for level in config.levels:
            values = [
                r.value
                for r in reports
                if r.level is level
            ]
            by_dim = {r.dimension: r.value for r in reports if r.level is level}
            row_vals = [by_dim[d] for d in dims]
            writer.writerow(
                [level.value]
                + [f"{v:.6f}" for v in row_vals]
                + [f"{sum(values) / len(values):.6f}"]
            )
    return result


def run_axis_corr(config: RunConfig) -> tuple[list[str], list[list[float]]]:
    """Cross-correlate the human annotation axes of the configured dataset."""
    ds = _ingest(config)
    axes, matrix = metaeval.axis_correlation_matrix(
        ds.axis_grids(), impute_zero=config.impute_zero
    )
    out_dir = Path(config.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    with (out_dir / "axis_corr.csv").open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", *axes])
        for axis, row in zip(axes, matrix):
            writer.writerow([axis] + [f"{v:.3f}" for v in row])
    return axes, matrix.tolist()


def run_validate(config: RunConfig):
    ds = _ingest(config)
    return validate_dataset(ds.records())


_CONFIG_OPTIONS = [
    click.option("--config", "config_path", required=True, type=click.Path(exists=True)),
    click.option("--backend", "backend_kind", type=click.Choice([k.value for k in BackendKind])),
    click.option("--model"),
    click.option("--n", type=int),
    click.option("--variant", type=click.Choice([v.value for v in scorer.ScoreVariant])),
    click.option("--n-samples", type=int),
    click.option("--seed", type=int),
    click.option("--cache-dir"),
    click.option("--out", "out_dir"),
    click.option("--impute-zero", is_flag=True, default=None),
    click.option(
        "--level",
        "levels",
        multiple=True,
        type=click.Choice([lv.value for lv in metaeval.CorrelationLevel]),
    ),
]


def _with_config_options(fn):
    for option in reversed(_CONFIG_OPTIONS):
        fn = option(fn)
    return fn


def _config_from_kwargs(kwargs) -> RunConfig:
    overrides = {
        "backend_kind": BackendKind(kwargs["backend_kind"])
        if kwargs.get("backend_kind")
        else None,
        "model": kwargs.get("model"),
        "n": kwargs.get("n"),
        "variant": scorer.ScoreVariant(kwargs["variant"])
        if kwargs.get("variant")
        else None,
        "n_samples": kwargs.get("n_samples"),
        "seed": kwargs.get("seed"),
        "cache_dir": kwargs.get("cache_dir"),
        "out_dir": kwargs.get("out_dir"),
        "impute_zero": kwargs.get("impute_zero"),
        "levels": tuple(metaeval.CorrelationLevel(lv) for lv in kwargs["levels"])
        if kwargs.get("levels")
        else None,
    }
    return load_config(kwargs["config_path"], overrides)


@click.group()
def main() -> None:
    """Reference-ladder text evaluation toolkit."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")


@main.command()
@_with_config_options
def generate(**kwargs) -> None:
    """Build synthetic reference ladders for every (context, dimension)."""
    failures = run_generate(_config_from_kwargs(kwargs))
    for ctx_id, dim, err in failures:
        click.echo(f"FAILED ({ctx_id}, {dim}): {err}", err=True)
    sys.exit(1 if failures else 0)


@main.command()
@_with_config_options
def score(**kwargs) -> None:
    """Score every candidate against its reference ladder."""
    failures = run_score(_config_from_kwargs(kwargs))
    for ctx_id, sys_id, dim, err in failures:
        click.echo(f"FAILED ({ctx_id}, {sys_id}, {dim}): {err}", err=True)
    sys.exit(1 if failures else 0)


@main.command(name="metaeval")
@_with_config_options
def metaeval_cmd(**kwargs) -> None:
    """Correlate predictions with human judgments."""
    result = run_metaeval(_config_from_kwargs(kwargs))
    for report in result["reports"]:
        click.echo(
            f"{report['dimension']:>14} {report['level']:>8} "
            f"{report['value']: .4f} (skipped {report['skipped_count']})"
        )


@main.command(name="axis-corr")
@_with_config_options
def axis_corr(**kwargs) -> None:
    """Cross-correlation matrix of the human annotation axes."""
    axes, matrix = run_axis_corr(_config_from_kwargs(kwargs))
    click.echo("axis," + ",".join(axes))
    for axis, row in zip(axes, matrix):
        click.echo(axis + "," + ",".join(f"{v:.3f}" for v in row))


@main.command()
@_with_config_options
def validate(**kwargs) -> None:
    """Lint the configured dataset against the core invariants."""
    report = run_validate(_config_from_kwargs(kwargs))
    for issue in report.issues:
        click.echo(f"{issue.kind} at {issue.locator}: {issue.message}", err=True)
    click.echo("OK" if report.ok else f"{len(report.issues)} issue(s)")
    sys.exit(0 if report.ok else 1)
