"""Generation stage: summarize each retrieved context subgraph, then answer.

One summarize call per retrieved subgraph, then a single answer call over
the summaries concatenated in rank order (LM calls per query = retrieved
subgraphs + 1). Prompts are built from versioned templates shipped as
package data and referenced by content hash in the answer record, so every
transcript is reproducible and auditable.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

from .errors import EmptyGraphError, LMClientError, NoContextError
from .retrieval import ContextSubgraph, Retriever

QUESTION_KINDS = ("true_false", "multiple_choice", "generative")
TRUE_FALSE_LABELS = ("yes", "no", "maybe")

_TEMPLATE_FILES = {
    "summarize": "summarize_v1.txt",
    "true_false": "answer_true_false_v1.txt",
    "multiple_choice": "answer_multiple_choice_v1.txt",
    "generative": "answer_generative_v1.txt",
}


def load_template(name: str) -> str:
    return resources.files("citeqa.templates").joinpath(_TEMPLATE_FILES[name]).read_text(encoding="utf-8")


def template_hash(name: str) -> str:
    return hashlib.sha256(load_template(name).encode("utf-8")).hexdigest()


@dataclass
class AnswerRecord:
    query: str
    question_kind: str
    summaries: list[dict]  # {"center": chunk_id, "summary": text}, rank order
    answer_text: str
    answer_label: str | None  # parsed label for constrained kinds
    abstained: bool
    transcripts: list[dict]
    template_hashes: dict[str, str]
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "query": self.query,
            "question_kind": self.question_kind,
            "summaries": self.summaries,
            "answer_text": self.answer_text,
            "answer_label": self.answer_label,
            "abstained": self.abstained,
            "transcripts": self.transcripts,
            "template_hashes": self.template_hashes,
            "config": self.config,
        }


def save_answer_record(record: AnswerRecord, path: str | Path) -> None:
    Path(path).write_text(json.dumps(record.to_dict(), ensure_ascii=False, indent=2), encoding="utf-8")


NO_CONTEXT_MARKER = "(no additional context)"


def _context_block(subgraph: ContextSubgraph, texts: dict[str, str]) -> str:
    neighbors = [cid for cid in subgraph.node_ids if cid != subgraph.center]
    if not neighbors:
        return NO_CONTEXT_MARKER
    lines = []
    for cid in neighbors:
        kinds = sorted({e.kind for e in subgraph.edges if e.src == cid and e.dst == subgraph.center})
        label = "+".join(kinds) if kinds else "indirect"
        lines.append(f"- ({label}) [{cid}]: {texts[cid]}")
    return "\n".join(lines)


def _complete_nonempty(client, messages: list[dict]) -> str:
    """One retry on an empty completion, then surface the failure."""
    response = client.complete(messages)
    if response.strip():
        return response
    response = client.complete(messages)
    if response.strip():
        return response
    raise LMClientError("language model returned an empty completion twice")


def summarize_subgraph(
    client,
    query: str,
    subgraph: ContextSubgraph,
    texts: dict[str, str],
    word_cap: int = 200,
) -> str:
    """Summarize one retrieved subgraph; the prompt carries the center text
    and every neighbor text annotated with its edge kind."""
    prompt = load_template("summarize").format(
        query=query,
        center_id=subgraph.center,
        center_text=texts[subgraph.center],
        context_block=_context_block(subgraph, texts),
        word_cap=word_cap,
    )
    return _complete_nonempty(client, [{"role": "user", "content": prompt}])


def parse_true_false(text: str) -> str | None:
    import re

    match = re.search(r"\b(yes|no|maybe)\b", text.lower())
    return match.group(1) if match else None


def parse_choice(text: str, n_options: int) -> str | None:
    import re

    letters = "abcdefghijklmnopqrstuvwxyz"[:n_options]
    match = re.search(rf"\(([{letters}])\)", text.lower())
    if match:
        return match.group(1)
    match = re.search(rf"\b([{letters}])\b", text.lower())
    return match.group(1) if match else None


def _options_block(options: list[str]) -> str:
    letters = "abcdefghijklmnopqrstuvwxyz"
    return "\n".join(f"({letters[i]}) {opt}" for i, opt in enumerate(options))


def generate_answer(
    client,
    query: str,
    summaries: list[str],
    question_kind: str,
    options: list[str] | None = None,
) -> tuple[str, str | None, bool]:
    """Final answer over the rank-ordered summaries.

    Returns (completion text, parsed label, abstained). Constrained kinds
    get one reprompt on an unparseable completion and then abstain; parsing
    never raises.
    """
    if question_kind not in QUESTION_KINDS:
        raise ValueError(f"unknown question kind {question_kind!r}")
    if not summaries:
        raise NoContextError("no summaries to answer from")
    if question_kind == "multiple_choice" and not options:
        raise ValueError("multiple_choice questions need options")
    summaries_block = "\n".join(f"{i + 1}. {s}" for i, s in enumerate(summaries))
    fields = {"query": query, "summaries_block": summaries_block}
    if question_kind == "multiple_choice":
        fields["options_block"] = _options_block(options or [])
    prompt = load_template(question_kind).format(**fields)
    text = _complete_nonempty(client, [{"role": "user", "content": prompt}])

    if question_kind == "generative":
        return text, None, False
    if question_kind == "true_false":
        parse = parse_true_false
    else:
        parse = lambda t: parse_choice(t, len(options or []))  # noqa: E731
    label = parse(text)
    if label is None:
        retry_prompt = prompt + "\n\nYour previous reply could not be parsed. " + (
            "Reply with exactly one of: yes, no, or maybe."
            if question_kind == "true_false"
            else "Reply with exactly one option letter in parentheses."
        )
        text = _complete_nonempty(client, [{"role": "user", "content": retry_prompt}])
        label = parse(text)
    return text, label, label is None


def answer_pipeline(
    query: str,
    retriever: Retriever,
    top_k: int,
    client,
    question_kind: str,
    options: list[str] | None = None,
    word_cap: int = 200,
    config_echo: dict | None = None,
) -> AnswerRecord:
    """retrieve -> summarize each subgraph -> answer; transcripts retained."""
    try:
        results = retriever.retrieve(query, top_k)
    except EmptyGraphError as exc:
        raise NoContextError(f"retrieval produced no context: {exc}") from exc
    if not results:
        raise NoContextError("retrieval produced no context")
    texts = retriever.indexes.chunk_texts
    transcript_start = len(client.transcript)
    summaries = []
    for subgraph in results:
        summaries.append(
            {"center": subgraph.center, "summary": summarize_subgraph(client, query, subgraph, texts, word_cap)}
        )
    text, label, abstained = generate_answer(
        client, query, [s["summary"] for s in summaries], question_kind, options
    )
    return AnswerRecord(
        query=query,
        question_kind=question_kind,
        summaries=summaries,
        answer_text=text,
        answer_label=label,
        abstained=abstained,
        transcripts=[dict(t) for t in client.transcript[transcript_start:]],
        template_hashes={
            "summarize": template_hash("summarize"),
            question_kind: template_hash(question_kind),
        },
        config=config_echo or {},
    )
