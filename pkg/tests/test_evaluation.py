import functools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ostr.corpus import NoiseConfig, build_charset, synth_split
from ostr.errors import InvalidArgument
from ostr.evaluation import (EmptyRecognizer, NormalizationRules, OracleRecognizer, compute_acc, compute_ned,
                             cosine, edit_distance, evaluate, format_report, load_rule_table, ned_term,
                             normalize_text, parse_report, run_benchmark, score, similarity_probe)
from ostr.gradcheck import DESK_CONFIG
from ostr.model import TextRecognizer
from ostr.preprocess import PreprocessConfig


def oracle_distance(a, b):
    """Plain recursive Levenshtein distance."""
    @functools.lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(d(i - 1, j) + 1, d(i, j - 1) + 1, d(i - 1, j - 1) + (a[i - 1] != b[j - 1]))
    return d(len(a), len(b))


def random_pairs(n, seed, alphabet="abcA B", max_len=8):
    rng = np.random.default_rng(seed)
    out = []
    for _ in range(n):
        a = "".join(rng.choice(list(alphabet), rng.integers(0, max_len + 1)))
        b = "".join(rng.choice(list(alphabet), rng.integers(0, max_len + 1)))
        out.append((a, b))
    return out


def test_edit_distance_matches_recursive_oracle():
    for a, b in random_pairs(300, 0):
        assert edit_distance(a, b) == oracle_distance(a, b)


def test_ned_matches_oracle_formula():
    pairs = random_pairs(200, 1, alphabet="xyz")
    preds, labels = zip(*pairs)
    rules = NormalizationRules.none()
    want = 1 - np.mean([0.0 if not max(len(p), len(y)) else oracle_distance(p, y) / max(len(p), len(y))
                        for p, y in pairs])
    assert compute_ned(list(preds), list(labels), rules) == pytest.approx(want, abs=1e-15)


@given(st.text(max_size=8), st.text(max_size=8), st.text(max_size=8))
def test_edit_distance_is_a_metric(a, b, c):
    assert edit_distance(a, b) == edit_distance(b, a)
    assert (edit_distance(a, b) == 0) == (a == b)
    assert edit_distance(a, c) <= edit_distance(a, b) + edit_distance(b, c)
    assert abs(len(a) - len(b)) <= edit_distance(a, b) <= max(len(a), len(b))


def test_ned_examples():
    assert ned_term("", "") == 0.0
    assert ned_term("abc", "") == 1.0
    assert ned_term("kitten", "sitting") == pytest.approx(3 / 7)
    assert compute_ned(["", "abc"], ["", "abd"]) == pytest.approx(1 - (0 + 1 / 3) / 2)
    assert compute_acc(["a", "b"], ["a", "c"]) == 0.5


@given(st.text(max_size=12))
def test_normalization_is_idempotent(s):
    once = normalize_text(s)
    assert normalize_text(once) == once


def test_normalization_rules():
    assert normalize_text("Ａ Ｂｃ　體") == "abc体"
    assert normalize_text("A b", NormalizationRules.none()) == "A b"
    assert compute_acc(["HELLO world"], ["helloworld"]) == 1.0


def test_rule_table_loading(tmp_path):
    (tmp_path / "t.tsv").write_text("a\tb\n\nc\td\n", encoding="utf-8")
    assert load_rule_table(tmp_path / "t.tsv") == {"a": "b", "c": "d"}
    (tmp_path / "bad.tsv").write_text("abc\n", encoding="utf-8")
    with pytest.raises(InvalidArgument):
        load_rule_table(tmp_path / "bad.tsv")


def test_metric_argument_errors():
    with pytest.raises(InvalidArgument):
        compute_acc([], [])
    with pytest.raises(InvalidArgument):
        compute_ned(["a"], ["a", "b"])


def test_score_splits_by_orientation():
    res = score(["a", "b", "c"], ["a", "x", "c"], ["H", "V", "V"])
    assert res.acc == pytest.approx(2 / 3)
    assert res.by_orientation["H"] == (1.0, 1.0, 1)
    assert res.by_orientation["V"][0] == 0.5


@pytest.fixture(scope="module")
def small_set():
    cs = build_charset(5, 0)
    return cs, list(synth_split(cs, 12, 0.5, 0, NoiseConfig.default(), 1, 3))


def test_oracle_and_empty_recognizers(small_set):
    cs, samples = small_set
    perfect = evaluate(OracleRecognizer(), samples, cs)
    assert perfect.acc == 1.0 and perfect.ned == 1.0 and perfect.n == 12
    empty = evaluate(EmptyRecognizer(), samples, cs)
    assert empty.acc == 0.0 and empty.ned == 0.0


def test_benchmark_records_load_errors_and_round_trips(small_set):
    cs, samples = small_set

    def broken():
        raise OSError("missing checkpoint")

    rows = run_benchmark([("oracle", OracleRecognizer()), ("broken", broken)],
                         [("test", samples), ("again", samples[:3])], cs)
    assert len(rows) == 4
    assert rows[2] == {"name": "broken", "dataset": "test", "error": "missing checkpoint"}
    text = format_report(rows, "seed=1\n")
    assert text.startswith("# schema=ostr-bench-v1\n# config seed=1\n")
    back = parse_report(text)
    assert back[2]["error"] == "missing checkpoint"
    assert back[0]["acc"] == 1.0 and back[0]["n"] == 12 and back[1]["n"] == 3


def test_cosine():
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 2], [2, 4]) == pytest.approx(1.0)
    assert cosine([0, 0], [1, 1]) == 0.0


def test_probe_is_seeded_and_bounded(small_set):
    cs, _ = small_set
    model = TextRecognizer(DESK_CONFIG, seed=0)
    pc = PreprocessConfig(32, 64)
    for source in ("raw", "content"):
        rep = similarity_probe(model, cs, source, 6, 0, pc, label_len=2)
        assert rep.pairs == 6 and rep.source == source
        assert -1 <= rep.s_o_mean <= 1 and -1 <= rep.s_c_mean <= 1
        again = similarity_probe(model, cs, source, 6, 0, pc, label_len=2)
        assert again == rep
    with pytest.raises(InvalidArgument):
        similarity_probe(model, cs, "pixels", 6, 0, pc)
