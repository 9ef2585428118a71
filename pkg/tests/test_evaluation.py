"""Metric primitives and the evaluation runner."""

import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from citeqa.errors import CiteqaError, CorpusError
from citeqa.evaluation import (
    EvalReport,
    QAItem,
    accuracy_f1,
    aggregate_rows,
    hit_at_k,
    load_qa_dataset,
    mrr,
    run_eval,
)
from citeqa.llm import ScriptedMockClient, echo_client
from citeqa.retrieval import Retriever

from helpers import build_assets, identity_mean_params


class TestHitAtK:
    def test_gold_at_rank_one(self):
        assert hit_at_k(["a", "b", "c"], {"a"}, 1) == 1

    def test_boundary_rank_three(self):
        ranked = ["x", "y", "gold"]
        assert hit_at_k(ranked, {"gold"}, 1) == 0
        assert hit_at_k(ranked, {"gold"}, 3) == 1

    def test_short_list_without_gold(self):
        assert hit_at_k(["x"], {"gold"}, 5) == 0

    def test_empty_gold_rejected(self):
        with pytest.raises(ValueError):
            hit_at_k(["x"], set(), 1)

    @given(st.lists(st.text(min_size=1), min_size=1, max_size=8, unique=True), st.integers(1, 8))
    @settings(max_examples=50, deadline=None)
    def test_monotone_in_k(self, ranked, k):
        gold = {ranked[-1]}
        assert hit_at_k(ranked, gold, k) <= hit_at_k(ranked, gold, k + 1)


class TestMrr:
    @pytest.mark.parametrize("rank", [1, 2, 3, 4, 5])
    def test_enumerated_ranks(self, rank):
        options = [f"o{i}" for i in range(5)]
        assert mrr(options, f"o{rank - 1}") == pytest.approx(1.0 / rank)

    def test_absent_gold_is_zero(self):
        assert mrr(["a", "b"], "z") == 0.0


class TestAccuracyF1:
    def test_all_correct(self):
        acc, f1 = accuracy_f1(["yes", "no"], ["yes", "no"], ("yes", "no"))
        assert (acc, f1) == (1.0, 1.0)

    def test_hand_filled_confusion_table(self):
        # TP=1 FP=1 FN=1 TN=1 -> per-class F1 0.5, macro 0.5, accuracy 0.5
        predictions = ["pos", "pos", "neg", "neg"]
        golds = ["pos", "neg", "pos", "neg"]
        acc, f1 = accuracy_f1(predictions, golds, ("pos", "neg"))
        assert acc == pytest.approx(0.5)
        assert f1 == pytest.approx(0.5)

    def test_all_abstentions(self):
        acc, f1 = accuracy_f1([None, None], ["yes", "no"], ("yes", "no"))
        assert acc == 0.0
        assert f1 == 0.0

    def test_label_order_invariance(self):
        predictions = ["yes", "no", "maybe", None]
        golds = ["yes", "maybe", "maybe", "no"]
        a = accuracy_f1(predictions, golds, ("yes", "no", "maybe"))
        b = accuracy_f1(predictions, golds, ("maybe", "yes", "no"))
        assert a == pytest.approx(b)

    def test_empty_inputs_rejected(self):
        with pytest.raises(ValueError):
            accuracy_f1([], [], ("yes",))


def eval_fixture():
    records = [
        {"id": "A", "text": "alpha beta gamma delta", "references": ["B"]},
        {"id": "B", "text": "epsilon zeta eta theta"},
        {"id": "C", "text": "iota kappa lam mu"},
    ]
    corpus, chunks, index, provider, indexes, graph = build_assets(records, chunk_len=2, top_n=1, dim=16)
    return Retriever(graph, indexes, identity_mean_params(embed_dim=16), provider)


class TestRunEval:
    def test_perfect_retrieval(self):
        retriever = eval_fixture()
        dataset = [
            QAItem(qid="1", question="alpha beta", kind="generative", gold_answer="", gold_chunks=("A#0000",)),
        ]
        report = run_eval(dataset, retriever)
        assert report.aggregates["retrieval"]["hit1"] == 1.0
        assert report.aggregates["retrieval"]["hit3"] == 1.0

    def test_two_item_hand_computation(self):
        retriever = eval_fixture()
        ranked = retriever.ranked_ids("alpha beta")
        dataset = [
            QAItem(qid="1", question="alpha beta", kind="generative", gold_answer="", gold_chunks=(ranked[0],)),
            QAItem(qid="2", question="alpha beta", kind="generative", gold_answer="", gold_chunks=(ranked[1],)),
        ]
        report = run_eval(dataset, retriever)
        retrieval = report.aggregates["retrieval"]
        assert retrieval["hit1"] == pytest.approx(0.5)
        assert retrieval["hit3"] == pytest.approx(1.0)
        assert retrieval["mrr"] == pytest.approx(0.75)

    def test_no_client_means_no_answer_metrics(self):
        retriever = eval_fixture()
        dataset = [QAItem(qid="1", question="alpha", kind="true_false", gold_answer="yes", gold_chunks=("A#0000",))]
        report = run_eval(dataset, retriever, client=None)
        assert "answers" not in report.aggregates

    def test_doc_level_gold_matching(self):
        retriever = eval_fixture()
        dataset = [QAItem(qid="1", question="alpha beta", kind="generative", gold_answer="", gold_docs=("A",))]
        report = run_eval(dataset, retriever)
        assert report.aggregates["retrieval"]["hit1"] == 1.0

    def test_item_without_gold_excluded_but_counted(self):
        retriever = eval_fixture()
        dataset = [
            QAItem(qid="1", question="alpha", kind="generative", gold_answer="", gold_chunks=("A#0000",)),
            QAItem(qid="2", question="alpha", kind="generative", gold_answer=""),
        ]
        report = run_eval(dataset, retriever)
        assert report.aggregates["retrieval"]["items"] == 1
        assert report.aggregates["retrieval"]["items_excluded"] == 1

    def test_answer_metrics_with_mock(self):
        retriever = eval_fixture()
        client = ScriptedMockClient(rules=[], default="yes")
        dataset = [
            QAItem(qid="1", question="alpha?", kind="true_false", gold_answer="yes", gold_chunks=("A#0000",)),
            QAItem(qid="2", question="beta?", kind="true_false", gold_answer="no", gold_chunks=("A#0001",)),
        ]
        report = run_eval(dataset, retriever, client=client)
        answers = report.aggregates["answers"]["true_false"]
        assert answers["accuracy"] == pytest.approx(0.5)
        assert answers["items"] == 2

    def test_mcq_mrr_from_single_answer(self):
        retriever = eval_fixture()
        client = ScriptedMockClient(rules=[], default="(b)")
        dataset = [
            QAItem(
                qid="1", question="which?", kind="multiple_choice", gold_answer="a",
                options=("one", "two", "three"), gold_chunks=("A#0000",),
            ),
        ]
        report = run_eval(dataset, retriever, client=client)
        mc = report.aggregates["answers"]["multiple_choice"]
        # chosen (b) first, then a, c -> gold a at rank 2
        assert mc["mrr"] == pytest.approx(0.5)
        assert mc["accuracy"] == 0.0

    def test_per_item_failure_recorded_not_fatal(self):
        retriever = eval_fixture()

        class Exploding:
            transcript = []

            def complete(self, messages):
                from citeqa.errors import LMClientError

                raise LMClientError("boom")

        dataset = [QAItem(qid="1", question="alpha", kind="true_false", gold_answer="yes", gold_chunks=("A#0000",))]
        report = run_eval(dataset, retriever, client=Exploding())
        assert report.rows[0]["error"] == "boom"
        assert report.rows[0]["hit1"] is not None  # retrieval part still scored


class TestReportPersistence:
    def test_save_and_aggregate_consistency(self, tmp_path):
        retriever = eval_fixture()
        dataset = [QAItem(qid="1", question="alpha beta", kind="generative", gold_answer="", gold_chunks=("A#0000",))]
        report = run_eval(dataset, retriever, fingerprint={"note": "test"})
        json_path, csv_path = tmp_path / "report.json", tmp_path / "report.csv"
        report.save(json_path, csv_path)
        payload = json.loads(json_path.read_text())
        assert payload["fingerprint"] == {"note": "test"}
        assert aggregate_rows(payload["rows"], answers_present=False) == payload["aggregates"]
        assert csv_path.read_text().splitlines()[0].startswith("qid,")

    def test_tampered_aggregates_refused(self, tmp_path):
        retriever = eval_fixture()
        dataset = [QAItem(qid="1", question="alpha", kind="generative", gold_answer="", gold_chunks=("A#0000",))]
        report = run_eval(dataset, retriever)
        report.aggregates["retrieval"]["hit1"] = 0.123
        with pytest.raises(CiteqaError, match="do not match"):
            report.save(tmp_path / "r.json")


class TestDatasetLoading:
    def test_load_and_validate(self, tmp_path):
        path = tmp_path / "qa.jsonl"
        path.write_text(
            "\n".join(
                [
                    json.dumps({"qid": "1", "question": "q?", "kind": "true_false", "answer": "Yes"}),
                    json.dumps(
                        {
                            "qid": "2",
                            "question": "which?",
                            "kind": "multiple_choice",
                            "options": ["x", "y"],
                            "answer": "(b)",
                            "gold_chunks": ["A#0000"],
                        }
                    ),
                ]
            )
        )
        items = load_qa_dataset(path)
        assert items[0].gold_answer == "yes"
        assert items[1].gold_answer == "b"

    def test_bad_kind_rejected(self, tmp_path):
        path = tmp_path / "qa.jsonl"
        path.write_text(json.dumps({"qid": "1", "question": "q", "kind": "essay", "answer": ""}))
        with pytest.raises(CorpusError, match="kind"):
            load_qa_dataset(path)

    def test_mcq_needs_two_options(self, tmp_path):
        path = tmp_path / "qa.jsonl"
        path.write_text(json.dumps({"qid": "1", "question": "q", "kind": "multiple_choice", "options": ["only"], "answer": "(a)"}))
        with pytest.raises(CorpusError, match="options"):
            load_qa_dataset(path)
