"""Retrieval and answer metrics plus the end-to-end evaluation runner.

Retrieval metrics (Hit@1, Hit@3, MRR over gold ranks) need no language
model and run fully offline. Answer metrics are computed only when a client
is supplied; per-item pipeline failures are recorded in the row instead of
aborting the run. A retrieved chunk counts as gold if its id is listed or,
when gold is document-level, if it belongs to a gold document.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

from .corpus import split_chunk_id
from .errors import CiteqaError, CorpusError
from .pipeline import QUESTION_KINDS, TRUE_FALSE_LABELS, answer_pipeline, parse_choice
from .retrieval import Retriever

logger = logging.getLogger(__name__)

REPORT_VERSION = 1


@dataclass(frozen=True)
class QAItem:
    qid: str
    question: str
    kind: str  # true_false | multiple_choice | generative
    gold_answer: str
    options: tuple[str, ...] = ()
    gold_chunks: tuple[str, ...] = ()
    gold_docs: tuple[str, ...] = ()


def load_qa_dataset(path: str | Path) -> list[QAItem]:
    items: list[QAItem] = []
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read QA dataset {path}: {exc}") from exc
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}:{lineno}: malformed JSON: {exc}") from exc
        kind = rec.get("kind")
        if kind not in QUESTION_KINDS:
            raise CorpusError(f"{path}:{lineno}: unknown question kind {kind!r}")
        options = tuple(rec.get("options", ()))
        answer = str(rec.get("answer", ""))
        if kind == "multiple_choice":
            if len(options) < 2:
                raise CorpusError(f"{path}:{lineno}: multiple_choice needs at least 2 options")
            label = parse_choice(answer, len(options))
            if label is None:
                raise CorpusError(f"{path}:{lineno}: answer {answer!r} names no option letter")
            answer = label
        if kind == "true_false":
            answer = answer.strip().lower()
            if answer not in TRUE_FALSE_LABELS:
                raise CorpusError(f"{path}:{lineno}: true_false answer must be yes/no/maybe")
        items.append(
            QAItem(
                qid=str(rec["qid"]),
                question=rec["question"],
                kind=kind,
                gold_answer=answer,
                options=options,
                gold_chunks=tuple(rec.get("gold_chunks", ())),
                gold_docs=tuple(rec.get("gold_docs", ())),
            )
        )
    return items


# ---------------------------------------------------------------------------
# metric primitives


def hit_at_k(ranked_chunk_ids: list[str], gold_ids: set[str] | list[str], k: int) -> int:
    """1 iff any gold id appears within the first k ranks."""
    if k < 1:
        raise ValueError("k must be >= 1")
    gold = set(gold_ids)
    if not gold:
        raise ValueError("empty gold set; exclude the item instead")
    return int(any(cid in gold for cid in ranked_chunk_ids[:k]))


def mrr(ranked_options: list[str], gold: str) -> float:
    """Reciprocal rank of gold, or 0.0 when it is absent (flagged by caller)."""
    for rank, option in enumerate(ranked_options, start=1):
        if option == gold:
            return 1.0 / rank
    return 0.0


def accuracy_f1(
    predictions: list[str | None],
    golds: list[str],
    label_set: tuple[str, ...],
) -> tuple[float, float]:
    """Exact-match accuracy and macro F1 over label_set.

    Abstentions (None) are wrong for accuracy and count as a miss of the
    gold label's recall; they never inflate any label's precision.
    """
    if len(predictions) != len(golds):
        raise ValueError("predictions and golds must have equal length")
    if not predictions:
        raise ValueError("empty inputs")
    correct = sum(1 for p, g in zip(predictions, golds) if p == g)
    f1s = []
    for label in label_set:
        tp = sum(1 for p, g in zip(predictions, golds) if p == label and g == label)
        fp = sum(1 for p, g in zip(predictions, golds) if p == label and g != label)
        fn = sum(1 for p, g in zip(predictions, golds) if g == label and p != label)
        denom = 2 * tp + fp + fn
        f1s.append(2 * tp / denom if denom else 0.0)
    return correct / len(predictions), sum(f1s) / len(f1s)


# ---------------------------------------------------------------------------
# runner


@dataclass
class EvalReport:
    fingerprint: dict
    aggregates: dict
    rows: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "format_version": REPORT_VERSION,
            "fingerprint": self.fingerprint,
            "aggregates": self.aggregates,
            "rows": self.rows,
        }

    def save(self, json_path: str | Path, csv_path: str | Path | None = None) -> None:
        """Persist; refuses to write aggregates that disagree with the rows."""
        recomputed = aggregate_rows(self.rows, answers_present="answers" in self.aggregates)
        if recomputed != self.aggregates:
            raise CiteqaError("report aggregates do not match their rows; refusing to save")
        Path(json_path).write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8")
        if csv_path is not None:
            fieldnames = [
                "qid", "kind", "gold_rank", "hit1", "hit3", "rr", "gold_missing",
                "prediction", "gold", "correct", "abstained", "answer_rr", "error",
            ]
            with open(csv_path, "w", newline="", encoding="utf-8") as fh:
                writer = csv.DictWriter(fh, fieldnames=fieldnames, extrasaction="ignore")
                writer.writeheader()
                for row in self.rows:
                    writer.writerow(row)


def _mean(values: list[float]) -> float | None:
    return sum(values) / len(values) if values else None


def aggregate_rows(rows: list[dict], answers_present: bool) -> dict:
    """Recompute aggregate metrics from per-item rows."""
    retrieval_rows = [r for r in rows if r.get("hit1") is not None]
    excluded = [r for r in rows if r.get("hit1") is None]
    aggregates: dict = {
        "retrieval": {
            "hit1": _mean([r["hit1"] for r in retrieval_rows]),
            "hit3": _mean([r["hit3"] for r in retrieval_rows]),
            "mrr": _mean([r["rr"] for r in retrieval_rows]),
            "items": len(retrieval_rows),
            "items_excluded": len(excluded),
        }
    }
    if answers_present:
        tf = [r for r in rows if r["kind"] == "true_false" and r.get("prediction_attempted")]
        mc = [r for r in rows if r["kind"] == "multiple_choice" and r.get("prediction_attempted")]
        gen = [r for r in rows if r["kind"] == "generative" and r.get("prediction_attempted")]
        answers: dict = {}
        if tf:
            acc, f1 = accuracy_f1([r["prediction"] for r in tf], [r["gold"] for r in tf], TRUE_FALSE_LABELS)
            answers["true_false"] = {"accuracy": acc, "macro_f1": f1, "items": len(tf)}
        if mc:
            acc = sum(1 for r in mc if r["correct"]) / len(mc)
            answers["multiple_choice"] = {
                "accuracy": acc,
                "mrr": _mean([r["answer_rr"] for r in mc]),
                "items": len(mc),
            }
        if gen:
            answers["generative"] = {"items": len(gen)}
        aggregates["answers"] = answers
    return aggregates


def _gold_rank(ranked_ids: list[str], item: QAItem) -> int | None:
    gold_chunks = set(item.gold_chunks)
    gold_docs = set(item.gold_docs)
    for rank, cid in enumerate(ranked_ids, start=1):
        if cid in gold_chunks or split_chunk_id(cid)[0] in gold_docs:
            return rank
    return None


def run_eval(
    dataset: list[QAItem],
    retriever: Retriever,
    client=None,
    answer_top_k: int = 3,
    fingerprint: dict | None = None,
) -> EvalReport:
    """Retrieval metrics for every item with gold labels; answer metrics when
    a client is supplied. Per-item failures are recorded, not fatal."""
    rows: list[dict] = []
    for item in dataset:
        row: dict = {
            "qid": item.qid,
            "kind": item.kind,
            "gold_rank": None,
            "hit1": None,
            "hit3": None,
            "rr": None,
            "gold_missing": False,
            "prediction": None,
            "prediction_attempted": False,
            "gold": item.gold_answer,
            "correct": None,
            "abstained": None,
            "answer_rr": None,
            "error": None,
        }
        try:
            if item.gold_chunks or item.gold_docs:
                ranked = retriever.ranked_ids(item.question)
                rank = _gold_rank(ranked, item)
                row["gold_rank"] = rank
                row["gold_missing"] = rank is None
                row["hit1"] = 1 if rank is not None and rank <= 1 else 0
                row["hit3"] = 1 if rank is not None and rank <= 3 else 0
                row["rr"] = 1.0 / rank if rank is not None else 0.0
            if client is not None:
                record = answer_pipeline(
                    item.question,
                    retriever,
                    answer_top_k,
                    client,
                    item.kind,
                    options=list(item.options) or None,
                )
                row["prediction_attempted"] = True
                row["prediction"] = record.answer_label
                row["abstained"] = record.abstained
                if item.kind == "true_false":
                    row["correct"] = record.answer_label == item.gold_answer
                elif item.kind == "multiple_choice":
                    row["correct"] = record.answer_label == item.gold_answer
                    row["answer_rr"] = _option_mrr(item, record.answer_label)
                else:
                    row["prediction"] = record.answer_text
                    row["correct"] = None
        except CiteqaError as exc:
            row["error"] = str(exc)
            logger.warning("item %s failed: %s", item.qid, exc)
        rows.append(row)
    answers_present = client is not None
    aggregates = aggregate_rows(rows, answers_present)
    return EvalReport(fingerprint=fingerprint or {}, aggregates=aggregates, rows=rows)


def _option_mrr(item: QAItem, chosen: str | None) -> float:
    """Options ranked as [chosen] + the rest in given order, then 1/rank of gold.

    A single constrained answer induces this ranking; abstention keeps the
    given order.
    """
    letters = "abcdefghijklmnopqrstuvwxyz"[: len(item.options)]
    order = list(letters)
    if chosen in order:
        order.remove(chosen)
        order.insert(0, chosen)
    return mrr(order, item.gold_answer)


def params_fingerprint(arrays: dict) -> str:
    h = hashlib.sha256()
    for name in sorted(arrays):
        h.update(name.encode("utf-8"))
        h.update(arrays[name].tobytes())
    return h.hexdigest()
