import io
from fractions import Fraction

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bdieval.dictionary import AnnotatedDictionary, AnnotatedPair, PosTag
from bdieval.errors import BDIError, FormatError
from bdieval.evaluation import (EvalConfig, EvaluationReport, Verdict, compare, disagreements,
                                gap_analysis, gap_from_counts, load_verdicts, precision_at_k,
                                stratified, write_delta_table)
from bdieval.retrieval import PredictionTable


def table(preds: dict, scoring="csls") -> PredictionTable:
    sources = tuple(preds)
    targets = tuple(tuple(v) for v in preds.values())
    scores = tuple(tuple(-float(i) for i in range(len(v))) for v in preds.values())
    k = max(len(v) for v in preds.values())
    return PredictionTable(sources, targets, scores, scoring, k, 10 if scoring == "csls" else None, 100)


def gold(rows):
    """rows: (source, target) or (source, target, pos)."""
    pairs = []
    for r in rows:
        pos = PosTag(r[2]) if len(r) > 2 and r[2] else None
        pairs.append(AnnotatedPair(r[0], r[1], pos, True if pos else None))
    return AnnotatedDictionary(tuple(pairs), "en", "bg")


def test_all_correct_is_100():
    g = gold([("a", "x"), ("b", "y")])
    assert precision_at_k(table({"a": ["x"], "b": ["y"]}), g).precision == 100.0


def test_45_of_100():
    g = gold([(f"w{i}", f"t{i}") for i in range(100)])
    preds = {f"w{i}": [f"t{i}" if i < 45 else "wrong"] for i in range(100)}
    rep = precision_at_k(table(preds), g, EvalConfig(k=1))
    assert rep.precision == 45.0 and rep.n_correct == 45 and rep.n_evaluated == 100


def test_any_gold_target_counts():
    g = gold([("a", "x"), ("a", "x2")])
    assert precision_at_k(table({"a": ["x2"]}), g).precision == 100.0


def test_oov_policies():
    g = gold([("a", "x"), ("b", "y")])
    preds = table({"a": ["x"]})
    excl = precision_at_k(preds, g, EvalConfig(1, "exclude"))
    assert (excl.precision, excl.n_evaluated, excl.n_excluded_oov) == (100.0, 1, 1)
    wrong = precision_at_k(preds, g, EvalConfig(1, "count_wrong"))
    assert (wrong.precision, wrong.n_evaluated) == (50.0, 2)


def test_k_longer_than_lists_reported():
    with pytest.raises(BDIError, match="k=2"):
        precision_at_k(table({"a": ["x"]}), gold([("a", "x")]), EvalConfig(k=2))


def test_eval_config_validation():
    with pytest.raises(ValueError):
        EvalConfig(k=0)
    with pytest.raises(ValueError):
        EvalConfig(oov_policy="ignore")


def test_stratified_all_nouns_equals_overall():
    g = gold([("a", "x", "NOUN"), ("b", "y", "NOUN"), ("c", "z", "NOUN")])
    rep = stratified(table({"a": ["x"], "b": ["q"], "c": ["z"]}), g)
    assert rep.per_tag["NOUN"].precision == rep.precision
    assert set(rep.per_tag) == {"NOUN"}


def test_stratified_hand_counts():
    g = gold([("a", "x", "NOUN"), ("b", "y", "NOUN"), ("c", "z", "NOUN"), ("d", "v", "VERB")])
    rep = stratified(table({"a": ["x"], "b": ["y"], "c": ["no"], "d": ["no"]}), g)
    assert round(rep.per_tag["NOUN"].precision, 1) == 66.7
    assert rep.per_tag["VERB"].precision == 0.0
    assert "AD" not in rep.per_tag


def test_stratum_uses_first_tagged_pair_and_unannotated_bucket():
    g = gold([("a", "x", "VERB"), ("a", "x2", "NOUN"), ("b", "y")])
    rep = stratified(table({"a": ["x2"], "b": ["y"]}), g)
    assert rep.per_tag["VERB"].correct == 1
    assert rep.per_tag["UNANNOTATED"].n == 1


def test_report_dict_round_trip():
    g = gold([("a", "x", "NOUN"), ("b", "y", "AD")])
    rep = stratified(table({"a": ["x"], "b": ["q"]}), g, echo={"normalization": "unit"}, system="S")
    back = EvaluationReport.from_dict(rep.as_dict())
    assert back == rep
    assert rep.config["normalization"] == "unit" and rep.config["k_csls"] == 10


def report(p_correct, n=100, gold_id="g", **cfg):
    return EvaluationReport(k=1, n_evaluated=n, n_correct=p_correct, n_excluded_oov=0,
                            config={"k": 1, **cfg}, gold_id=gold_id)


def test_compare_self_is_zero():
    rows = compare({"base": report(40)}, "base")
    assert rows[0].delta_original == 0.0


def test_compare_subtraction():
    rows = compare({"A": report(100, 200), "B": report(95, 200)}, "B")
    assert rows[0].delta_original == pytest.approx(2.5)


def test_compare_original_and_cleaned():
    # P@1 values of 43.93/51.73 and 45.33/56.44 expressed as counts
    orig = {"MUSE-S": report(4393, 10000), "RCSLS": report(5173, 10000)}
    cleaned = {"MUSE-S": report(4533, 10000, "c"), "RCSLS": report(5644, 10000, "c")}
    rows = {r.system: r for r in compare(orig, "MUSE-S", cleaned)}
    assert rows["RCSLS"].delta_cleaned == pytest.approx(11.11)
    assert rows["RCSLS"].delta_original == pytest.approx(7.80)
    buf = io.StringIO()
    write_delta_table(list(rows.values()), buf)
    assert "RCSLS\t51.73\t7.80\t56.44\t11.11" in buf.getvalue()


def test_compare_refuses_mismatch():
    with pytest.raises(BDIError):
        compare({"A": report(1), "B": report(1, gold_id="other")}, "A")
    with pytest.raises(BDIError):
        compare({"A": report(1, scoring="csls"), "B": report(1, scoring="cosine")}, "A")
    with pytest.raises(BDIError):
        compare({"A": report(1)}, "missing")


def test_disagreements_identical_tables():
    g = gold([("a", "x"), ("b", "y")])
    t = table({"a": ["x"], "b": ["q"]})
    sets = disagreements(t, t, g)
    assert sets.a_only == sets.b_only == ()


def test_disagreements_set_algebra():
    g = gold([("w1", "x1"), ("w2", "x2"), ("w3", "x3"), ("w4", "x4")])
    a = table({"w1": ["x1"], "w2": ["x2"], "w3": ["no"], "w4": ["no"]})
    b = table({"w1": ["no"], "w2": ["x2"], "w3": ["x3"], "w4": ["no"]})
    sets = disagreements(a, b, g)
    assert (sets.a_only, sets.b_only, sets.both, sets.neither) == (("w1",), ("w3",), ("w2",), ("w4",))


def test_disagreements_missing_words():
    g = gold([("w1", "x1"), ("w2", "x2")])
    a = table({"w1": ["x1"], "w2": ["x2"]})
    b = table({"w1": ["x1"]})
    assert disagreements(a, b, g).missing == ("w2",)
    assert disagreements(a, b, g).a_only == ()
    assert disagreements(a, b, g, "count_wrong").a_only == ("w2",)


words = st.lists(st.sampled_from([f"t{i}" for i in range(6)]), min_size=5, max_size=5)


@st.composite
def instances(draw):
    n = draw(st.integers(1, 25))
    rows = []
    for i in range(n):
        pos = draw(st.sampled_from([None, "NOUN", "VERB", "AD", "PNOUN"]))
        for t in sorted(set(draw(st.lists(st.sampled_from([f"t{j}" for j in range(6)]), min_size=1, max_size=3)))):
            rows.append((f"s{i}", t, pos))
    covered = draw(st.lists(st.booleans(), min_size=n, max_size=n))
    preds = {f"s{i}": draw(words) for i in range(n) if covered[i] or i == 0}
    return gold(rows), preds


@settings(max_examples=100, deadline=None)
@given(instances(), st.randoms(use_true_random=False), st.sampled_from(["exclude", "count_wrong"]))
def test_precision_properties(inst, rnd, policy):
    g, preds = inst
    t = table(preds)
    values = [precision_at_k(t, g, EvalConfig(k, policy)).precision for k in range(1, 6)]
    assert values == sorted(values)
    shuffled = []
    for p in g.pairs:
        shuffled.append(p)
    rnd.shuffle(shuffled)
    g2 = AnnotatedDictionary(tuple(shuffled), "en", "bg")
    for k in range(1, 6):
        assert precision_at_k(t, g2, EvalConfig(k, policy)).n_correct == \
            precision_at_k(t, g, EvalConfig(k, policy)).n_correct
    rep = stratified(t, g, EvalConfig(2, policy))
    assert sum(r.correct for r in rep.per_tag.values()) == rep.n_correct
    assert sum(r.n for r in rep.per_tag.values()) == rep.n_evaluated


@settings(max_examples=50, deadline=None)
@given(instances(), instances())
def test_partition_consistent_with_correct_counts(inst_a, inst_b):
    g, preds_a = inst_a
    preds_b = {w: v for w, v in inst_b[1].items() if w in g.index} or {g.source_words[0]: ["t0"] * 5}
    a, b = table(preds_a), table(preds_b)
    sets = disagreements(a, b, g, "count_wrong")
    ca = precision_at_k(a, g, EvalConfig(1, "count_wrong")).n_correct
    cb = precision_at_k(b, g, EvalConfig(1, "count_wrong")).n_correct
    assert len(sets.a_only) - len(sets.b_only) == ca - cb
    assert sets.n_evaluated == g.source_word_count


def test_gap_raw_from_counts():
    rep = gap_from_counts(125, 50, 1125)
    assert rep.raw_gap == Fraction(20, 3)
    assert abs(rep.raw_gap_pct - 6.67) <= 0.01
    assert rep.summary_lines()[0] == "raw_gap=6.67%"
    assert rep.adjusted_gap == rep.raw_gap


def test_gap_adjusted_literal_formula():
    rep = gap_from_counts(125, 50, 1125, 34, 25)
    assert abs(rep.adjusted_gap_pct - 0.80) <= 0.01
    # fractional genuine counts are carried exactly
    exact = gap_from_counts(125, 50, 1125, Fraction(27, 100) * 125, Fraction(1, 2) * 50)
    assert exact.adjusted_gap == Fraction(875, 1125)


def verdict_file(rows):
    text = "source\tsystem_label\tcategory\tnote\n" + "".join("\t".join(r) + "\n" for r in rows)
    return load_verdicts(io.StringIO(text))


def test_gap_analysis_from_verdicts():
    g = gold([(f"w{i}", f"x{i}") for i in range(10)])
    a = table({f"w{i}": [f"x{i}" if i < 6 else "no"] for i in range(10)})
    b = table({f"w{i}": [f"x{i}" if 3 <= i < 8 else "no"] for i in range(10)})
    sets = disagreements(a, b, g)
    assert sets.a_only == ("w0", "w1", "w2") and sets.b_only == ("w6", "w7")
    verdicts = verdict_file([
        ("w0", "RCSLS", "canonical_variant_missing", "definite form"),
        ("w1", "RCSLS", "genuine_win", ""),
        ("w2", "RCSLS", "synonym_or_sense_missing", ""),
        ("w6", "VM-S", "genuine_win", ""),
        ("w7", "VM-S", "canonical_variant_missing", "feminine form"),
    ])
    rep = gap_analysis(sets, verdicts, 10, "RCSLS", "VM-S")
    assert rep.raw_gap_pct == pytest.approx(10.0)
    assert rep.adjusted_gap_pct == pytest.approx(0.0)
    assert rep.breakdown_a["canonical_variant_missing"] == 1
    assert rep.as_dict()["breakdown_b_pct"]["genuine_win"] == 50.0


def test_gap_all_genuine_equals_raw():
    sets_a = tuple(f"a{i}" for i in range(5))
    sets_b = tuple(f"b{i}" for i in range(2))
    from bdieval.evaluation import DisagreementSets
    sets = DisagreementSets(sets_a, sets_b, (), ())
    verdicts = {(w, "A"): (Verdict.GENUINE_WIN, "") for w in sets_a}
    verdicts.update({(w, "B"): (Verdict.GENUINE_WIN, "") for w in sets_b})
    rep = gap_analysis(sets, verdicts, 20)
    assert rep.adjusted_gap == rep.raw_gap
    # a false False Positive on A's side only can only shrink the gap
    verdicts[("a0", "A")] = (Verdict.SYNONYM_OR_SENSE_MISSING, "")
    assert gap_analysis(sets, verdicts, 20).adjusted_gap < rep.raw_gap


def test_gap_missing_verdicts_listed():
    from bdieval.evaluation import DisagreementSets
    sets = DisagreementSets(("w1",), ("w2",), (), ())
    with pytest.raises(BDIError, match="w2"):
        gap_analysis(sets, {("w1", "A"): (Verdict.GENUINE_WIN, "")}, 10)


def test_verdict_file_errors():
    with pytest.raises(FormatError):
        verdict_file([("w", "A", "lucky", "")])
    with pytest.raises(FormatError):
        verdict_file([("w", "A", "genuine_win", ""), ("w", "A", "genuine_error", "")])
