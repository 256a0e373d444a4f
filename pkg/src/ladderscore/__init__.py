"""Reference-free text evaluation via synthetic reference ladders.

The pipeline: generate a ladder of synthetic reference texts of graded
quality for each (context, dimension), collect pairwise Better/Worse/Similar
judgments of a candidate against every rung, and aggregate them into an
absolute score. A meta-evaluation harness measures agreement with human
judgments on annotated benchmarks.
"""

from ladderscore.core import (
    AnnotatedRecord,
    CandidateText,
    ComparisonDistribution,
    EvaluationContext,
    MetaEvalRecord,
    QualityDimension,
    SyntheticReferenceSet,
)

__all__ = [
    "AnnotatedRecord",
    "CandidateText",
    "ComparisonDistribution",
    "EvaluationContext",
    "MetaEvalRecord",
    "QualityDimension",
    "SyntheticReferenceSet",
]

__version__ = "0.1.0"
