"""Command-line front end.

Subcommands: classify-audit, retrieve-audit, debias-fit, apply, probe,
synth. Every command reads a single declarative JSON config, echoes it
verbatim into the report, and writes the report as canonical JSON, so a
run is fully reproducible from its report alone. Identical inputs and
config produce byte-identical reports.

Exit codes: 0 success, 2 config error, 3 data error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from . import __version__
from .core import (
    TRAIN,
    EmbeddingMatrix,
    GroupLabels,
    LabeledDataset,
    partition_by_group,
)
from .errors import ConfigError, DataError, FlensError, InvalidK, NumericError
from .io import (
    read_embeddings,
    read_label_table,
    read_labels,
    read_transform,
    write_embeddings,
    write_label_table,
    write_report,
    write_transform,
)
from .metrics import (
    accuracy,
    ddp_classification,
    ddp_rep,
    ddp_retrieval,
    dtpr,
    precision_at_k,
    skew_at_k,
)
from .mitigation import (
    FairPcaTransform,
    MiClipTransform,
    apply_fair_pca,
    apply_mi_clip,
    fit_fair_pca,
    fit_mi_clip,
)
from .probe import DEFAULT_L2, DEFAULT_MAX_ITER, DEFAULT_TOL, evaluate_probe, fit_probe
from .report import (
    build_report,
    cell_key,
    comparison_record,
    metric_record,
    sanitize,
    taxonomy_record,
)
from .stats import per_query_similarity_tests
from .synth import SynthSpec, generate
from .tasks import (
    INDEPENDENCE,
    QuerySet,
    TaxonomyTags,
    balanced_retrieval,
    cosine_similarity_matrix,
    infer_protected_attribute,
    top_k,
    zero_shot_classify,
)

GROUND_TRUTH = "groundTruth"
INFERRED = "inferred"


def _require(cfg: dict, key: str, context: str = "config") -> Any:
    if key not in cfg:
        raise ConfigError(f"{context}: missing required key {key!r}")
    return cfg[key]


def _load_config(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config {path} is not valid JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def _map_ordered(fn: Callable, items: Sequence, threads: int) -> list:
    """Apply fn to each item, optionally across threads, preserving order."""
    if threads > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, items))
    return [fn(item) for item in items]


def _load_dataset(cfg: dict) -> LabeledDataset:
    data = _require(cfg, "data")
    embeddings = read_embeddings(_require(data, "embeddings", "data"))
    labels_path = _require(data, "labels", "data")
    protected = read_labels(labels_path, _require(data, "attribute", "data"), kind="group")
    table = read_label_table(labels_path)
    split_column = data.get("split_column", "split")
    split = np.asarray(table[split_column]) if split_column in table else None
    return LabeledDataset(embeddings=embeddings, protected=protected, split=split)


def _apply_transform(
    transform: MiClipTransform | FairPcaTransform, embeddings: EmbeddingMatrix
) -> EmbeddingMatrix:
    if isinstance(transform, MiClipTransform):
        return apply_mi_clip(transform, embeddings)
    return apply_fair_pca(transform, embeddings)


def _maybe_transform(
    cfg: dict, *matrices: EmbeddingMatrix
) -> tuple[tuple[EmbeddingMatrix, ...], dict | None]:
    """Apply the configured transform, if any, to every matrix (single shared map)."""
    path = cfg.get("transform")
    if not path:
        return matrices, None
    transform, meta = read_transform(path)
    block = {"path": path, "kind": type(transform).__name__, "metadata": meta}
    return tuple(_apply_transform(transform, m) for m in matrices), block


def _test_view(dataset: LabeledDataset) -> tuple[np.ndarray, GroupLabels]:
    """Indices and protected labels of the evaluation (test) split."""
    idx = np.flatnonzero(dataset.test_mask)
    if idx.size == 0:
        raise DataError("no test items to evaluate")
    return idx, dataset.protected.take(idx)


def _dataset_block(dataset: LabeledDataset, cfg: dict) -> dict:
    """Provenance echo: attribute name, its category-to-index mapping, sizes."""
    return {
        "attribute": cfg["data"]["attribute"],
        "group_names": list(dataset.protected.group_names or []),
        "group_count": dataset.protected.group_count,
        "items": dataset.n,
        "train_items": int(dataset.train_mask.sum()),
        "test_items": int(dataset.test_mask.sum()),
    }


def cmd_classify_audit(cfg: dict, threads: int = 1) -> dict:
    """Zero-shot classification audit: DDP always, DTPR/accuracy with ground truth."""
    dataset = _load_dataset(cfg)
    queries = read_embeddings(_require(cfg, "queries"))
    tasks = _require(cfg, "tasks")
    if not isinstance(tasks, list) or not tasks:
        raise ConfigError("tasks must be a non-empty list")
    (items, queries), transform_block = _maybe_transform(cfg, dataset.embeddings, queries)
    test_idx, groups = _test_view(dataset)
    test_items = items.take(test_idx)
    labels_path = cfg["data"]["labels"]

    def run(task: dict) -> dict:
        name = str(_require(task, "name", "task"))
        a = int(_require(task, "class_a", f"task {name!r}"))
        b = int(_require(task, "class_b", f"task {name!r}"))
        if not (0 <= a < queries.rows and 0 <= b < queries.rows):
            raise ConfigError(f"task {name!r}: class row outside the query file")
        tags = TaxonomyTags(
            human_centric=bool(task.get("human_centric", True)),
            subjective=bool(task.get("subjective", True)),
            fairness_mode=INDEPENDENCE,
        )
        predictions = zero_shot_classify(test_items, queries.row(a), queries.row(b))
        record = {
            "task_name": name,
            "taxonomy": taxonomy_record(tags),
            "cell": cell_key(tags),
            "metrics": {"ddp_classification": metric_record(ddp_classification(predictions, groups))},
            "performance": {},
        }
        truth_column = task.get("ground_truth")
        if truth_column:
            truth = read_labels(labels_path, truth_column, kind="binary").take(test_idx)
            record["metrics"]["dtpr"] = metric_record(dtpr(predictions, truth, groups))
            record["performance"]["accuracy"] = accuracy(predictions, truth)
        return record

    records = _map_ordered(run, tasks, threads)
    return build_report(
        "classify-audit",
        cfg,
        records,
        [transform_block] if transform_block else [],
        extra={"dataset": _dataset_block(dataset, cfg)},
    )


def _retrieval_metrics(
    retrieved: np.ndarray,
    groups: GroupLabels,
    tags: TaxonomyTags,
    relevant: np.ndarray | None,
    k: int,
) -> dict:
    """Metric block for one query at one k, routed by fairness mode."""
    partition = partition_by_group(retrieved, groups)
    metrics: dict[str, dict] = {}
    performance: dict[str, float] = {}
    if tags.fairness_mode == INDEPENDENCE:
        metrics["ddp_retrieval"] = metric_record(ddp_retrieval(partition))
    else:
        metrics["skew_at_k"] = metric_record(skew_at_k(partition))
        if relevant is not None:
            hits = retrieved[np.isin(retrieved, relevant)]
            if hits.size:
                per_group = np.bincount(groups.labels[hits], minlength=groups.group_count)
                metrics["ddp_rep"] = metric_record(
                    ddp_rep(tuple(int(c) for c in per_group), int(hits.size))
                )
            performance["precision_at_k"] = precision_at_k(retrieved, relevant, k)
    return {"metrics": metrics, "performance": performance}


def cmd_retrieve_audit(cfg: dict, threads: int = 1) -> dict:
    """Top-k retrieval audit with per-query equal-means similarity tests."""
    dataset = _load_dataset(cfg)
    retrieval = _require(cfg, "retrieval")
    k_list = [int(k) for k in _require(retrieval, "k", "retrieval")]
    query_specs = _require(retrieval, "queries", "retrieval")
    if not isinstance(query_specs, list) or not query_specs:
        raise ConfigError("retrieval.queries must be a non-empty list")
    if not k_list:
        raise ConfigError("retrieval.k must be a non-empty list")
    query_matrix = read_embeddings(_require(cfg, "queries"))
    matrices = [dataset.embeddings, query_matrix]
    balanced_cfg = cfg.get("balanced")
    if balanced_cfg:
        matrices.append(read_embeddings(_require(balanced_cfg, "embeddings", "balanced")))
    transformed, transform_block = _maybe_transform(cfg, *matrices)
    items, query_matrix = transformed[0], transformed[1]
    balanced_matrix = transformed[2] if balanced_cfg else None
    test_idx, groups = _test_view(dataset)
    test_items = items.take(test_idx)
    n_test = test_items.rows
    p = groups.group_count
    labels_path = cfg["data"]["labels"]

    def parse_query(spec: dict) -> dict:
        name = str(_require(spec, "name", "query"))
        row = int(_require(spec, "row", f"query {name!r}"))
        if not 0 <= row < query_matrix.rows:
            raise ConfigError(f"query {name!r}: row outside the query file")
        tags = TaxonomyTags(
            human_centric=bool(spec.get("human_centric", True)),
            subjective=bool(spec.get("subjective", True)),
            fairness_mode=str(spec.get("fairness_mode", INDEPENDENCE)),
        )
        relevant = None
        if spec.get("relevant"):
            relevance = read_labels(labels_path, spec["relevant"], kind="binary").take(test_idx)
            relevant = np.flatnonzero(relevance.labels == 1)
        for k in k_list:
            if not 1 <= k <= n_test:
                raise InvalidK(f"k={k} outside [1, {n_test}] for query {name!r}")
        return {"name": name, "row": row, "tags": tags, "relevant": relevant}

    parsed = [parse_query(spec) for spec in query_specs]
    query_set = QuerySet(
        query_embeddings=EmbeddingMatrix(query_matrix.values[[q["row"] for q in parsed]]),
        query_names=tuple(q["name"] for q in parsed),
        taxonomy=tuple(q["tags"] for q in parsed),
    )
    sims = cosine_similarity_matrix(test_items, query_set.query_embeddings)

    def run(position_query: tuple[int, dict]) -> tuple[list[dict], list[dict], dict]:
        position, query = position_query
        row_sims = sims[position][None, :]
        tags = query["tags"]
        records, balanced_records = [], []
        for k in k_list:
            result = top_k(row_sims, k)[0]
            block = _retrieval_metrics(result.ranked_indices, groups, tags, query["relevant"], k)
            records.append(
                {
                    "task_name": f"{query['name']} @ k={k}",
                    "taxonomy": taxonomy_record(tags),
                    "cell": cell_key(tags),
                    **block,
                }
            )
            if balanced_matrix is not None:
                # p group-specific rows per query, in the order queries are listed
                group_rows = balanced_matrix.values[position * p : (position + 1) * p]
                if group_rows.shape[0] != p:
                    raise ConfigError(
                        f"balanced embeddings need {p} rows per query, query {query['name']!r} overruns"
                    )
                balanced = balanced_retrieval(test_items, EmbeddingMatrix(group_rows), k)
                bal_block = _retrieval_metrics(
                    balanced.ranked_indices, groups, tags, query["relevant"], k
                )
                balanced_records.append(
                    {
                        "task_name": f"{query['name']} @ k={k}",
                        "taxonomy": taxonomy_record(tags),
                        "cell": cell_key(tags),
                        **bal_block,
                    }
                )
        comparison = per_query_similarity_tests(row_sims, groups)[0]
        return records, balanced_records, {query["name"]: comparison_record(comparison)}

    outputs = _map_ordered(run, list(enumerate(parsed)), threads)
    records = [rec for out in outputs for rec in out[0]]
    balanced_records = [rec for out in outputs for rec in out[1]]
    similarity_tests = {}
    for out in outputs:
        similarity_tests.update(out[2])
    blocks = []
    if transform_block:
        blocks.append(transform_block)
    if balanced_records:
        blocks.append(
            {
                "name": "balanced-queries",
                "records": sorted(balanced_records, key=lambda r: r["task_name"]),
            }
        )
    extra = {
        "dataset": _dataset_block(dataset, cfg),
        "similarity_tests": {k: similarity_tests[k] for k in sorted(similarity_tests)},
    }
    return build_report("retrieve-audit", cfg, records, blocks, extra)


def cmd_debias_fit(cfg: dict, threads: int = 1) -> dict:
    """Fit a debiasing transform on the train split and serialize it."""
    dataset = _load_dataset(cfg)
    method = _require(cfg, "method")
    if method not in ("miclip", "fairpca"):
        raise ConfigError(f"method must be 'miclip' or 'fairpca', got {method!r}")
    source = cfg.get("attribute_source", GROUND_TRUTH)
    if source not in (GROUND_TRUTH, INFERRED):
        raise ConfigError(f"attribute_source must be {GROUND_TRUTH!r} or {INFERRED!r}")
    out_path = _require(cfg, "transform_out")

    train_idx = np.flatnonzero(dataset.train_mask)
    if train_idx.size == 0:
        raise DataError("train split is empty; nothing to fit on")
    train_items = dataset.embeddings.take(train_idx)
    if source == INFERRED:
        prompts_path = cfg.get("prompts")
        if not prompts_path:
            raise ConfigError("inferred attribute_source requires a prompts embeddings file")
        prompts = read_embeddings(prompts_path)
        protected = infer_protected_attribute(train_items, prompts)
    else:
        protected = dataset.protected.take(train_idx)
    fit_dataset = LabeledDataset(
        embeddings=train_items,
        protected=protected,
        split=np.full(train_items.rows, TRAIN, dtype="<U5"),
    )

    metadata = {"method": method, "attribute_source": source}
    details: dict[str, Any] = {"train_items": int(train_idx.size)}
    if method == "miclip":
        params = cfg.get("miclip", {})
        m = int(_require(params, "m", "miclip"))
        bins = int(params.get("bins", 32))
        transform = fit_mi_clip(fit_dataset, m=m, bins=bins)
        details.update(
            retained_dims=transform.output_dims,
            cut_dims=[int(i) for i in transform.removed_dims],
        )
        metadata.update(m=m, bins=bins)
    else:
        params = cfg.get("fairpca", {})
        target_dim = params.get("target_dim")
        transform = fit_fair_pca(fit_dataset, None if target_dim is None else int(target_dim))
        centered = train_items.values - transform.mean
        onehot = np.zeros((train_items.rows, protected.group_count))
        onehot[np.arange(train_items.rows), protected.labels] = 1.0
        demeaned = onehot - onehot.mean(axis=0)
        residual = float(np.max(np.abs(demeaned.T @ centered @ transform.projection)))
        gram = transform.projection.T @ transform.projection
        ortho = float(np.max(np.abs(gram - np.eye(transform.target_dim))))
        details.update(
            target_dim=transform.target_dim,
            constraint_residual=residual,
            orthonormality_residual=ortho,
        )
        metadata.update(target_dim=transform.target_dim)
    write_transform(transform, out_path, metadata)
    record = {
        "task_name": f"debias-fit:{method}",
        "taxonomy": None,
        "cell": None,
        "metrics": {},
        "performance": {},
        "details": sanitize(details),
    }
    block = {"path": str(out_path), "kind": type(transform).__name__, "metadata": metadata}
    return build_report(
        "debias-fit", cfg, [record], [block], extra={"dataset": _dataset_block(dataset, cfg)}
    )


def cmd_apply(cfg: dict, threads: int = 1) -> dict:
    """Apply a serialized transform to an embeddings file."""
    source = read_embeddings(_require(cfg, "input"))
    transform, meta = read_transform(_require(cfg, "transform"))
    out_path = _require(cfg, "output")
    transformed = _apply_transform(transform, source)
    write_embeddings(transformed, out_path)
    record = {
        "task_name": "apply",
        "taxonomy": None,
        "cell": None,
        "metrics": {},
        "performance": {},
        "details": {
            "input_shape": [source.rows, source.dims],
            "output_shape": [transformed.rows, transformed.dims],
        },
    }
    block = {"path": cfg["transform"], "kind": type(transform).__name__, "metadata": meta}
    return build_report("apply", cfg, [record], [block])


def cmd_probe(cfg: dict, threads: int = 1) -> dict:
    """Linear-probe audit: per-attribute accuracy, before and after a transform."""
    dataset = _load_dataset(cfg)
    probe_cfg = _require(cfg, "probe")
    attributes = _require(probe_cfg, "attributes", "probe")
    if not isinstance(attributes, list) or not attributes:
        raise ConfigError("probe.attributes must be a non-empty list")
    l2 = float(probe_cfg.get("l2", DEFAULT_L2))
    max_iter = int(probe_cfg.get("max_iter", DEFAULT_MAX_ITER))
    tol = float(probe_cfg.get("tol", DEFAULT_TOL))
    (items,), transform_block = _maybe_transform(cfg, dataset.embeddings)
    train_idx = np.flatnonzero(dataset.train_mask)
    test_idx = np.flatnonzero(dataset.test_mask)
    if train_idx.size == 0 or test_idx.size == 0:
        raise DataError("probe audit needs non-empty train and test splits")
    labels_path = cfg["data"]["labels"]

    def run(attribute: str) -> dict:
        labels = read_labels(labels_path, attribute, kind="group")
        train_labels, test_labels = labels.take(train_idx), labels.take(test_idx)
        counts = test_labels.counts()
        majority = float(counts.max() / counts.sum())
        raw_model = fit_probe(
            dataset.embeddings.take(train_idx), train_labels, l2=l2, max_iter=max_iter, tol=tol
        )
        raw_acc = evaluate_probe(raw_model, dataset.embeddings.take(test_idx), test_labels)
        record = {
            "task_name": f"probe:{attribute}",
            "taxonomy": None,
            "cell": None,
            "metrics": {},
            "performance": {
                "majority_rate": majority,
                "accuracy_raw": raw_acc,
                "training_loss_raw": raw_model.training_loss,
            },
            "probe_config": {"l2": l2, "max_iter": max_iter, "tol": tol},
        }
        if transform_block is not None:
            model = fit_probe(items.take(train_idx), train_labels, l2=l2, max_iter=max_iter, tol=tol)
            record["performance"]["accuracy_transformed"] = evaluate_probe(
                model, items.take(test_idx), test_labels
            )
            record["performance"]["training_loss_transformed"] = model.training_loss
        return record

    records = _map_ordered(run, [str(a) for a in attributes], threads)
    return build_report(
        "probe",
        cfg,
        records,
        [transform_block] if transform_block else [],
        extra={"dataset": _dataset_block(dataset, cfg)},
    )


def cmd_synth(cfg: dict, threads: int = 1, seed_override: int | None = None) -> dict:
    """Generate a synthetic dataset and write its embedding and label files."""
    params = dict(_require(cfg, "synth"))
    if seed_override is not None:
        params["seed"] = seed_override
    try:
        spec = SynthSpec(
            n=int(_require(params, "n", "synth")),
            d=int(_require(params, "d", "synth")),
            p=int(_require(params, "p", "synth")),
            bias_dims=tuple(params.get("bias_dims", ())),
            bias_strength=float(params.get("bias_strength", 0.0)),
            concept_dims=tuple(params.get("concept_dims", ())),
            concept_strength=params.get("concept_strength"),
            seed=int(params.get("seed", 0)),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid synth parameters: {exc}") from exc
    dataset = generate(spec)
    output = _require(cfg, "output")
    embeddings_path = _require(output, "embeddings", "output")
    labels_path = _require(output, "labels", "output")
    write_embeddings(dataset.embeddings, embeddings_path)
    write_label_table(
        labels_path,
        {
            "group": [str(int(g)) for g in dataset.protected.labels],
            "concept": [str((int(c) + 1) // 2) for c in dataset.ground_truth.labels],
            "split": [str(s) for s in dataset.split],
        },
    )
    record = {
        "task_name": "synth",
        "taxonomy": None,
        "cell": None,
        "metrics": {},
        "performance": {},
        "details": {
            "spec": spec.to_dict(),
            "train_items": int(dataset.train_mask.sum()),
            "test_items": int(dataset.test_mask.sum()),
            "files": {"embeddings": str(embeddings_path), "labels": str(labels_path)},
        },
    }
    return build_report("synth", cfg, [record])


COMMANDS: dict[str, Callable[..., dict]] = {
    "classify-audit": cmd_classify_audit,
    "retrieve-audit": cmd_retrieve_audit,
    "debias-fit": cmd_debias_fit,
    "apply": cmd_apply,
    "probe": cmd_probe,
    "synth": cmd_synth,
}


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="flens",
        description="Fairness audits and debiasing for precomputed embedding spaces",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", required=True, help="declarative JSON config file")
        cmd.add_argument("--out", default=None, help="report destination (JSON)")
        cmd.add_argument("--threads", type=int, default=1, help="worker threads for task loops")
        cmd.add_argument("--seed", type=int, default=None, help="override the config seed")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = _load_config(args.config)
        if args.command == "synth":
            report = cmd_synth(cfg, threads=args.threads, seed_override=args.seed)
        else:
            report = COMMANDS[args.command](cfg, threads=args.threads)
        if args.out:
            write_report(report, args.out)
        else:
            sys.stdout.write(json.dumps(report, sort_keys=True, indent=2) + "\n")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4
    except (DataError, FlensError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    return 0


def entry() -> None:
    raise SystemExit(main())
