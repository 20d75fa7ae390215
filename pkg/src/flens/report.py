"""Audit report assembly.

Reports are plain dictionaries rendered to canonical JSON so identical
inputs always produce identical bytes. Non-finite sentinels become the
strings "inf"/"-inf"/"nan" because strict JSON has no spelling for them.

Category summaries are keyed by taxonomy cell. Exactly four cells are ever
evaluated: human-centric tasks crossed with objective/subjective and
independence/diversity. The non-human-centric subjective cell is out of
scope and never emitted; non-human-centric objective tasks carry
performance metrics only and appear in per-task records, not in a cell.
"""

from __future__ import annotations

import math
from typing import Any, Iterable

import numpy as np

from .metrics import MetricResult
from .stats import QueryGroupComparison, TestResult
from .tasks import TaxonomyTags

SCHEMA_VERSION = 1

EVALUATED_CELLS = (
    "human-centric/objective/independence",
    "human-centric/objective/diversity",
    "human-centric/subjective/independence",
    "human-centric/subjective/diversity",
)


def cell_key(tags: TaxonomyTags) -> str | None:
    """Taxonomy cell for a task, or None when the task has no fairness cell."""
    if not tags.human_centric:
        return None
    consistency = "subjective" if tags.subjective else "objective"
    return f"human-centric/{consistency}/{tags.fairness_mode}"


def sanitize(value: Any) -> Any:
    """Make a value JSON-safe and deterministic."""
    if isinstance(value, dict):
        return {str(k): sanitize(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [sanitize(v) for v in value]
    if isinstance(value, np.ndarray):
        return [sanitize(v) for v in value.tolist()]
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        value = float(value)
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    return value


def metric_record(result: MetricResult) -> dict:
    return sanitize(
        {
            "value": result.value,
            "arg_pair": list(result.arg_pair),
            "per_group_rates": result.per_group_rates,
        }
    )


def test_record(result: TestResult) -> dict:
    return sanitize(
        {
            "statistic": result.statistic,
            "p_value": result.p_value,
            "degrees_of_freedom": result.degrees_of_freedom,
        }
    )


def comparison_record(comparison: QueryGroupComparison) -> dict:
    return sanitize(
        {
            "test": test_record(comparison.test),
            "group_mean_similarity": comparison.group_means,
            "abs_mean_diff_x100": comparison.abs_mean_diff_x100,
        }
    )


def taxonomy_record(tags: TaxonomyTags) -> dict:
    return {
        "human_centric": tags.human_centric,
        "subjective": tags.subjective,
        "fairness_mode": tags.fairness_mode,
    }


def five_number_summary(values: Iterable[float]) -> dict:
    """Box-plot data as a quartile record; infinities are excluded up front."""
    arr = np.asarray([v for v in values], dtype=np.float64)
    finite = arr[np.isfinite(arr)]
    record: dict[str, Any] = {"count": int(arr.size), "non_finite": int(arr.size - finite.size)}
    if finite.size:
        q = np.quantile(finite, [0.0, 0.25, 0.5, 0.75, 1.0])
        record.update(
            min=q[0], q1=q[1], median=q[2], q3=q[3], max=q[4],
            mean=finite.mean(), std=float(np.std(finite)),
        )
    return sanitize(record)


def category_summary(task_records: list[dict]) -> dict:
    """Aggregate per-task metric values into the four evaluated taxonomy cells."""
    summary: dict[str, dict] = {}
    for key in EVALUATED_CELLS:
        tasks = [t for t in task_records if t.get("cell") == key]
        metric_values: dict[str, list[float]] = {}
        for task in tasks:
            for name, record in task.get("metrics", {}).items():
                value = record["value"]
                metric_values.setdefault(name, []).append(
                    float("inf") if value == "inf" else value
                )
        summary[key] = {
            "tasks": sorted(t["task_name"] for t in tasks),
            "metric_summary": {
                name: five_number_summary(vals) for name, vals in sorted(metric_values.items())
            },
        }
    return summary


def build_report(
    command: str,
    config: dict,
    task_records: list[dict],
    transform_blocks: list[dict] | None = None,
    extra: dict | None = None,
) -> dict:
    """Assemble the full report dictionary, ordered by task name."""
    from . import __version__

    tasks = sorted(task_records, key=lambda t: t["task_name"])
    report = {
        "schema_version": SCHEMA_VERSION,
        "tool_version": __version__,
        "command": command,
        "config": sanitize(config),
        "tasks": sanitize(tasks),
        "transforms": sanitize(transform_blocks or []),
        "category_summary": category_summary(tasks),
    }
    if extra:
        report.update(sanitize(extra))
    return report
