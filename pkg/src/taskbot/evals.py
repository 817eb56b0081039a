"""Offline evaluation: answer metrics, action-decoding metrics, dataset
builds, and latency summaries.

Metric conventions are frozen here so results are comparable across runs:
answer metrics normalize the SQuAD way, ROUGE-1 only lowercases, and
percentiles use the nearest-rank method.
"""

from __future__ import annotations

import math
import random
import re
import string
from collections import Counter
from typing import Iterable, Mapping, Sequence

from .action_dsl import (
    ActionSpace,
    DEFAULT_ACTION_SPACE,
    ParseError,
    parse_action,
    render_action,
    validate_action,
)
from .qa import assemble_context, classify_question, locate_span
from .taskgraph import SchemaError, load_task

_PUNCT = set(string.punctuation)


def normalize(text: str) -> list[str]:
    """Lowercase, strip punctuation, drop articles, split on whitespace."""
    lowered = text.lower()
    no_punct = "".join(ch for ch in lowered if ch not in _PUNCT)
    no_articles = re.sub(r"\b(a|an|the)\b", " ", no_punct)
    return no_articles.split()


def exact_match(prediction: str, reference: str) -> float:
    return float(normalize(prediction) == normalize(reference))


def token_f1(prediction: str, reference: str) -> float:
    """Multiset token F1 over normalized tokens."""
    pred_tokens = normalize(prediction)
    ref_tokens = normalize(reference)
    if not pred_tokens and not ref_tokens:
        return 1.0
    if not pred_tokens or not ref_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(ref_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def rouge1_f(prediction: str, reference: str) -> float:
    """Unigram overlap F-measure; lowercased whitespace tokens, punctuation
    and articles kept (unlike the SQuAD metrics above)."""
    pred_tokens = prediction.lower().split()
    ref_tokens = reference.lower().split()
    if not pred_tokens and not ref_tokens:
        return 1.0
    if not pred_tokens or not ref_tokens:
        return 0.0
    common = Counter(pred_tokens) & Counter(ref_tokens)
    overlap = sum(common.values())
    if overlap == 0:
        return 0.0
    precision = overlap / len(pred_tokens)
    recall = overlap / len(ref_tokens)
    return 2 * precision * recall / (precision + recall)


def eval_qa(records: Iterable[Mapping[str, str]]) -> dict:
    """Mean EM / token F1 / ROUGE-1 over {"prediction", "reference"} records."""
    em_total = f1_total = rouge_total = 0.0
    count = 0
    for record in records:
        prediction, reference = record["prediction"], record["reference"]
        em_total += exact_match(prediction, reference)
        f1_total += token_f1(prediction, reference)
        rouge_total += rouge1_f(prediction, reference)
        count += 1
    if count == 0:
        raise ValueError("no records to evaluate")
    return {
        "count": count,
        "exact_match": em_total / count,
        "f1": f1_total / count,
        "rouge1": rouge_total / count,
    }


def _canonical_or_none(text: str) -> str | None:
    try:
        return render_action(parse_action(text))
    except ParseError:
        return None


def eval_ndp(
    records: Iterable[Mapping],
    action_space: ActionSpace = DEFAULT_ACTION_SPACE,
) -> dict:
    """Score predicted action codes against gold ones.

    Records carry {"gold_action", "predicted_action"} plus optional "id"
    and "latency_ms". Records whose gold does not parse are excluded (their
    ids are reported): they cannot anchor accuracy. Accuracy is
    whole-string equality of the canonical renderings; macro P/R/F1 is over
    action names, classes being the union of gold and predicted names;
    parsability is the fraction of predictions that both parse and validate
    against the action space.
    """
    included: list[tuple[str, str, Mapping]] = []
    excluded_ids: list = []
    for record in records:
        gold_canon = _canonical_or_none(record["gold_action"])
        if gold_canon is None:
            excluded_ids.append(record.get("id"))
            continue
        included.append((gold_canon, record.get("predicted_action", ""), record))
    if not included:
        raise ValueError("no records with parseable gold")

    correct = 0
    parsable_in_space = 0
    latencies: list[float] = []
    pair_names: list[tuple[str, str | None]] = []
    for gold_canon, predicted, record in included:
        pred_canon = _canonical_or_none(predicted or "")
        if pred_canon == gold_canon:
            correct += 1
        if pred_canon is not None:
            action = parse_action(predicted)
            if validate_action(action, action_space).in_space:
                parsable_in_space += 1
            pred_name = action.name
        else:
            pred_name = None
        gold_name = parse_action(gold_canon).name
        pair_names.append((gold_name, pred_name))
        if record.get("latency_ms") is not None:
            latencies.append(float(record["latency_ms"]))

    classes = sorted(
        {g for g, _ in pair_names} | {p for _, p in pair_names if p is not None}
    )
    per_class: dict[str, dict[str, float]] = {}
    p_sum = r_sum = f_sum = 0.0
    for cls in classes:
        tp = sum(1 for g, p in pair_names if g == cls and p == cls)
        fp = sum(1 for g, p in pair_names if g != cls and p == cls)
        fn = sum(1 for g, p in pair_names if g == cls and p != cls)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        per_class[cls] = {"precision": precision, "recall": recall, "f1": f1}
        p_sum += precision
        r_sum += recall
        f_sum += f1

    n = len(included)
    return {
        "count": n,
        "excluded_gold_ids": excluded_ids,
        "accuracy": correct / n,
        "parsability": parsable_in_space / n,
        "macro_precision": p_sum / len(classes),
        "macro_recall": r_sum / len(classes),
        "macro_f1": f_sum / len(classes),
        "per_class": per_class,
        "mean_latency_ms": sum(latencies) / len(latencies) if latencies else None,
    }


# --- dataset build -----------------------------------------------------------

WOTE_STAGES = (
    "is_question",
    "answerable",
    "relevant_and_useful",
    "task_content",
    "internal_knowledge",
)


def _passes(flags: Mapping, stage: str) -> bool:
    if stage == "relevant_and_useful":
        return bool(flags.get("relevant")) and bool(flags.get("useful"))
    if stage == "internal_knowledge":
        return not flags.get("requires_external_knowledge", False)
    return bool(flags.get(stage))


def _record_context(record: Mapping) -> str:
    """Grounding context for one raw record: explicit or task-derived.

    Task payloads serialize through the same section layout QA prompts use,
    with an effectively unlimited budget so every step is present and span
    offsets are reproducible.
    """
    if "context" in record:
        return record["context"]
    task = load_task(record["task"])
    return assemble_context(task, [], "", 10**9).serialized_text


def build_wote(records: Sequence[Mapping]) -> tuple[list[dict], dict]:
    """Filter raw question annotations into an extractive QA dataset.

    Five filter stages run in a fixed order; a record must clear every
    earlier stage to be considered by the next, so stage counts are
    monotone non-increasing. Survivors get span annotations: the answer is
    located in the task context (case-insensitive retry allowed, and the
    stored text is canonicalized to the exact context substring). Per-record
    problems (bad task payload, answer not in context) are collected in the
    report, never raised.

    Each raw record: {"id", "domain", "question", "answer", "task" or
    "context", "history", "flags": {...}} with boolean flags is_question,
    answerable, relevant, useful, task_content,
    requires_external_knowledge. "answer" is a string or {"text": ...}.
    """
    stage_counts: list[dict] = []
    survivors = list(records)
    initial = len(survivors)
    for stage in WOTE_STAGES:
        survivors = [r for r in survivors if _passes(r.get("flags", {}), stage)]
        stage_counts.append({"stage": stage, "kept": len(survivors)})
    kept_values = [initial] + [entry["kept"] for entry in stage_counts]
    assert all(a >= b for a, b in zip(kept_values, kept_values[1:])), kept_values

    dataset: list[dict] = []
    errors: list[dict] = []
    for record in survivors:
        rid = record.get("id")
        try:
            raw_answer = record["answer"]
            answer_text = raw_answer["text"] if isinstance(raw_answer, Mapping) else raw_answer
            context = _record_context(record)
            grounding = locate_span(answer_text, context)
            if not grounding.grounded:
                raise ValueError(f"answer not found in task context: {answer_text!r}")
            assert grounding.start is not None and grounding.length is not None
            exact = context[grounding.start : grounding.start + grounding.length]
            dataset.append(
                {
                    "id": rid,
                    "domain": record.get("domain"),
                    "question": record["question"],
                    "answer": {"text": exact, "start": grounding.start},
                    "category": classify_question(record["question"]),
                    "task": record.get("task"),
                    "history": record.get("history", []),
                    "case_mismatch": grounding.case_mismatch,
                }
            )
        except (KeyError, TypeError, ValueError, SchemaError) as exc:
            errors.append({"id": rid, "error": str(exc)})
    dataset.sort(key=lambda rec: str(rec["id"]))
    report = {
        "initial": initial,
        "stages": stage_counts,
        "final": len(dataset),
        "errors": errors,
    }
    return dataset, report


def split_dataset(
    records: Sequence, ratios: Sequence[float], seed: int | None = None
) -> list[list]:
    """Partition records into len(ratios) contiguous splits.

    Ratios must be positive and sum to 1. Sizes are assigned by largest
    remainder so they always total len(records). A seed shuffles a copy
    first; without one the input order is kept.
    """
    if not ratios:
        raise ValueError("ratios must be non-empty")
    if any(r <= 0 for r in ratios):
        raise ValueError("ratios must be positive")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must sum to 1, got {sum(ratios)}")
    pool = list(records)
    if seed is not None:
        random.Random(seed).shuffle(pool)
    n = len(pool)
    exact = [r * n for r in ratios]
    sizes = [math.floor(e) for e in exact]
    remainder = n - sum(sizes)
    by_fraction = sorted(range(len(ratios)), key=lambda i: (-(exact[i] - sizes[i]), i))
    for i in by_fraction[:remainder]:
        sizes[i] += 1
    splits: list[list] = []
    at = 0
    for size in sizes:
        splits.append(pool[at : at + size])
        at += size
    return splits


# --- latency -----------------------------------------------------------------


def percentile(samples: Sequence[float], pct: float) -> float:
    """Nearest-rank percentile; pct in (0, 100]."""
    if not samples:
        raise ValueError("no samples")
    if not 0 < pct <= 100:
        raise ValueError("pct must be in (0, 100]")
    ordered = sorted(samples)
    rank = math.ceil(pct / 100.0 * len(ordered))
    return ordered[rank - 1]


def latency_report(samples_ms: Sequence[float], threshold_ms: float | None = None) -> dict:
    if not samples_ms:
        raise ValueError("no samples")
    report = {
        "count": len(samples_ms),
        "mean_ms": sum(samples_ms) / len(samples_ms),
        "p50_ms": percentile(samples_ms, 50),
        "p95_ms": percentile(samples_ms, 95),
    }
    if threshold_ms is not None:
        report["threshold_ms"] = threshold_ms
        report["fraction_under"] = sum(1 for s in samples_ms if s < threshold_ms) / len(samples_ms)
    return report
