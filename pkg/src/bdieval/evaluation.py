"""Precision at k, POS-stratified precision, system comparison and gap accounting."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Optional, TextIO

from bdieval.dictionary import AnnotatedDictionary
from bdieval.errors import BDIError, FormatError
from bdieval.retrieval import PredictionTable

logger = logging.getLogger(__name__)

OOV_POLICIES = ("exclude", "count_wrong")
UNANNOTATED = "UNANNOTATED"


@dataclass(frozen=True)
class EvalConfig:
    k: int = 1
    oov_policy: str = "exclude"

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be at least 1")
        if self.oov_policy not in OOV_POLICIES:
            raise ValueError(f"oov_policy must be one of {OOV_POLICIES}")


@dataclass(frozen=True)
class StratumResult:
    n: int
    correct: int

    @property
    def precision(self) -> float:
        return 100.0 * self.correct / self.n


@dataclass(frozen=True)
class EvaluationReport:
    k: int
    n_evaluated: int
    n_correct: int
    n_excluded_oov: int
    per_tag: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    gold_id: str = ""
    system: str = ""

    @property
    def precision(self) -> float:
        return 100.0 * self.n_correct / self.n_evaluated if self.n_evaluated else 0.0

    def as_dict(self) -> dict:
        return {
            "system": self.system,
            "gold_id": self.gold_id,
            "k": self.k,
            "precision": round(self.precision, 6),
            "n_evaluated": self.n_evaluated,
            "n_correct": self.n_correct,
            "n_excluded_oov": self.n_excluded_oov,
            "per_tag": {tag: {"n": r.n, "correct": r.correct, "precision": round(r.precision, 6)}
                        for tag, r in self.per_tag.items()},
            "config": dict(self.config),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "EvaluationReport":
        return cls(
            k=data["k"], n_evaluated=data["n_evaluated"], n_correct=data["n_correct"],
            n_excluded_oov=data["n_excluded_oov"],
            per_tag={tag: StratumResult(v["n"], v["correct"]) for tag, v in data.get("per_tag", {}).items()},
            config=data.get("config", {}), gold_id=data.get("gold_id", ""), system=data.get("system", ""),
        )


def word_correctness(preds: PredictionTable, gold: AnnotatedDictionary, k: int,
                     oov_policy: str = "exclude") -> tuple:
    """Per gold source word, whether a top-``k`` prediction is a gold target.

    Returns ``(correct, missing)``: ``correct`` maps evaluated words (gold order)
    to bool; ``missing`` lists gold words absent from ``preds``. Under
    ``count_wrong`` the missing words are also in ``correct`` as False.
    """
    if oov_policy not in OOV_POLICIES:
        raise ValueError(f"oov_policy must be one of {OOV_POLICIES}")
    correct = {}
    missing = []
    short = []
    for word in gold.source_words:
        predicted = preds.get(word)
        if predicted is None:
            missing.append(word)
            if oov_policy == "count_wrong":
                correct[word] = False
            continue
        if len(predicted) < k:
            short.append(word)
            continue
        targets = set(gold.targets(word))
        correct[word] = any(t in targets for t in predicted[:k])
    if short:
        raise BDIError(f"k={k} exceeds the prediction list length for {len(short)} words, "
                       f"e.g. {short[:5]}")
    return correct, missing


def stratum_of(gold: AnnotatedDictionary) -> dict:
    """Each source word's POS stratum: the tag of its first tagged pair."""
    strata = {}
    for p in gold.pairs:
        if p.pos is not None and p.source not in strata:
            strata[p.source] = p.pos.value
    return {w: strata.get(w, UNANNOTATED) for w in gold.source_words}


def precision_at_k(preds: PredictionTable, gold: AnnotatedDictionary, config: EvalConfig = EvalConfig(),
                   *, stratify: bool = False, echo: Optional[dict] = None, system: str = "") -> EvaluationReport:
    correct, missing = word_correctness(preds, gold, config.k, config.oov_policy)
    per_tag = {}
    if stratify:
        strata = stratum_of(gold)
        counts = {}
        for word, ok in correct.items():
            n, c = counts.get(strata[word], (0, 0))
            counts[strata[word]] = (n + 1, c + ok)
        # canonical tag order, unannotated last
        order = ["NOUN", "PNOUN", "VERB", "AD", "OTHER", UNANNOTATED]
        per_tag = {tag: StratumResult(*counts[tag]) for tag in order if tag in counts}
    cfg = {
        "k": config.k,
        "oov_policy": config.oov_policy,
        "scoring": preds.scoring,
        "k_csls": preds.k_csls,
        "candidate_pool": preds.candidate_pool,
    }
    cfg.update(echo or {})
    return EvaluationReport(
        k=config.k,
        n_evaluated=len(correct),
        n_correct=sum(correct.values()),
        n_excluded_oov=len(missing) if config.oov_policy == "exclude" else 0,
        per_tag=per_tag, config=cfg, gold_id=gold.fingerprint(), system=system,
    )


def stratified(preds: PredictionTable, gold: AnnotatedDictionary, config: EvalConfig = EvalConfig(),
               **kwargs) -> EvaluationReport:
    """P@k overall and per POS stratum; words without a tagged pair go to UNANNOTATED."""
    return precision_at_k(preds, gold, config, stratify=True, **kwargs)


# --- comparison against a baseline -------------------------------------------------

@dataclass(frozen=True)
class DeltaRow:
    system: str
    original: float
    delta_original: float
    cleaned: Optional[float] = None
    delta_cleaned: Optional[float] = None


def _check_comparable(reports: Mapping[str, EvaluationReport], what: str):
    items = list(reports.items())
    label0, ref = items[0]
    for label, rep in items[1:]:
        if rep.gold_id != ref.gold_id:
            raise BDIError(f"{what}: {label} and {label0} were scored on different gold dictionaries")
        if rep.k != ref.k or rep.config != ref.config:
            raise BDIError(f"{what}: {label} and {label0} differ in evaluation configuration")


def compare(reports: Mapping[str, EvaluationReport], baseline: str,
            cleaned: Optional[Mapping[str, EvaluationReport]] = None) -> list:
    """P@k differences to ``baseline``, on the original and (optionally) cleaned gold data."""
    if baseline not in reports:
        raise BDIError(f"baseline {baseline!r} is not among the reports")
    _check_comparable(reports, "original")
    if cleaned is not None:
        if set(cleaned) != set(reports):
            raise BDIError("original and cleaned reports must cover the same systems")
        _check_comparable(cleaned, "cleaned")
    base = reports[baseline].precision
    base_clean = cleaned[baseline].precision if cleaned is not None else None
    rows = []
    for label, rep in reports.items():
        row = DeltaRow(label, rep.precision, rep.precision - base)
        if cleaned is not None:
            c = cleaned[label].precision
            row = DeltaRow(label, rep.precision, rep.precision - base, c, c - base_clean)
        rows.append(row)
    return rows


def write_delta_table(rows, stream: TextIO) -> None:
    writer = csv.writer(stream, delimiter="\t", lineterminator="\n")
    writer.writerow(("system", "original", "delta_original", "cleaned", "delta_cleaned"))
    fmt = lambda v: "" if v is None else f"{v:.2f}"
    for r in rows:
        writer.writerow((r.system, fmt(r.original), fmt(r.delta_original), fmt(r.cleaned), fmt(r.delta_cleaned)))


# --- disagreement and gap analysis --------------------------------------------------

@dataclass(frozen=True)
class DisagreementSets:
    a_only: tuple
    b_only: tuple
    both: tuple
    neither: tuple
    missing: tuple = ()

    @property
    def n_evaluated(self) -> int:
        return len(self.a_only) + len(self.b_only) + len(self.both) + len(self.neither)


def disagreements(preds_a: PredictionTable, preds_b: PredictionTable, gold: AnnotatedDictionary,
                  oov_policy: str = "exclude") -> DisagreementSets:
    """Partition gold source words by which system is correct at k=1.

    Words missing from either table are listed in ``missing``; under
    ``exclude`` they are left out of the partition, under ``count_wrong`` the
    missing side counts as incorrect.
    """
    ok_a, miss_a = word_correctness(preds_a, gold, 1, "count_wrong")
    ok_b, miss_b = word_correctness(preds_b, gold, 1, "count_wrong")
    missing = set(miss_a) | set(miss_b)
    if missing:
        logger.warning("%d gold words are missing from at least one prediction table", len(missing))
    groups = {"a": [], "b": [], "both": [], "neither": []}
    for word in gold.source_words:
        if word in missing and oov_policy == "exclude":
            continue
        a, b = ok_a[word], ok_b[word]
        key = "both" if a and b else "a" if a else "b" if b else "neither"
        groups[key].append(word)
    return DisagreementSets(tuple(groups["a"]), tuple(groups["b"]), tuple(groups["both"]),
                            tuple(groups["neither"]),
                            tuple(w for w in gold.source_words if w in missing))


class Verdict(str, Enum):
    CANONICAL_VARIANT_MISSING = "canonical_variant_missing"
    SYNONYM_OR_SENSE_MISSING = "synonym_or_sense_missing"
    GENUINE_WIN = "genuine_win"
    GENUINE_ERROR = "genuine_error"

    @property
    def false_false_positive(self) -> bool:
        return self in (Verdict.CANONICAL_VARIANT_MISSING, Verdict.SYNONYM_OR_SENSE_MISSING)


VERDICT_COLUMNS = ("source", "system_label", "category", "note")


def load_verdicts(stream: TextIO) -> dict:
    """Read verdict TSV into ``{(source, system_label): (Verdict, note)}``."""
    reader = csv.reader(stream, delimiter="\t", quoting=csv.QUOTE_NONE)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != VERDICT_COLUMNS:
        raise FormatError("verdict header must be: source, system_label, category, note", 1)
    out = {}
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) == 3:
            row = [*row, ""]
        if len(row) != 4:
            raise FormatError(f"expected 4 fields, found {len(row)}", lineno)
        source, label, category, note = row
        try:
            verdict = Verdict(category.strip())
        except ValueError:
            raise FormatError(f"unknown verdict category {category!r}", lineno) from None
        key = (source.strip(), label.strip())
        if key in out:
            raise FormatError(f"second verdict for {key[0]!r} under {key[1]!r}", lineno)
        out[key] = (verdict, note)
    return out


@dataclass(frozen=True)
class GapReport:
    n_a_only: int
    n_b_only: int
    N: int
    a_genuine: Fraction
    b_genuine: Fraction
    breakdown_a: dict = field(default_factory=dict)
    breakdown_b: dict = field(default_factory=dict)
    label_a: str = "A"
    label_b: str = "B"

    def __post_init__(self):
        if self.N <= 0:
            raise ValueError("N must be positive")

    @property
    def raw_gap(self) -> Fraction:
        return Fraction(self.n_a_only - self.n_b_only, self.N) * 100

    @property
    def adjusted_gap(self) -> Fraction:
        return (Fraction(self.a_genuine) - Fraction(self.b_genuine)) / self.N * 100

    @property
    def raw_gap_pct(self) -> float:
        return float(self.raw_gap)

    @property
    def adjusted_gap_pct(self) -> float:
        return float(self.adjusted_gap)

    def summary_lines(self) -> list:
        return [f"raw_gap={self.raw_gap_pct:.2f}%", f"adjusted_gap={self.adjusted_gap_pct:.2f}%"]

    def as_dict(self) -> dict:
        def pct(counts, total):
            return {k: round(100.0 * v / total, 2) if total else 0.0 for k, v in counts.items()}

        return {
            "label_a": self.label_a,
            "label_b": self.label_b,
            "a_only": self.n_a_only,
            "b_only": self.n_b_only,
            "N": self.N,
            "a_genuine": str(self.a_genuine),
            "b_genuine": str(self.b_genuine),
            "raw_gap_pct": round(self.raw_gap_pct, 2),
            "adjusted_gap_pct": round(self.adjusted_gap_pct, 2),
            "raw_gap_formula": f"({self.n_a_only}-{self.n_b_only})/{self.N}*100",
            "adjusted_gap_formula": f"({self.a_genuine}-{self.b_genuine})/{self.N}*100",
            "breakdown_a": dict(self.breakdown_a),
            "breakdown_b": dict(self.breakdown_b),
            "breakdown_a_pct": pct(self.breakdown_a, self.n_a_only),
            "breakdown_b_pct": pct(self.breakdown_b, self.n_b_only),
        }


def gap_from_counts(a_only: int, b_only: int, N: int, a_genuine=None, b_genuine=None,
                    label_a: str = "A", label_b: str = "B") -> GapReport:
    """Gap report from bare counts; genuine counts default to the full disagreement sizes."""
    a_gen = Fraction(a_only if a_genuine is None else a_genuine)
    b_gen = Fraction(b_only if b_genuine is None else b_genuine)
    if not (0 <= a_gen <= a_only and 0 <= b_gen <= b_only):
        raise ValueError("genuine counts must lie between 0 and the disagreement sizes")
    return GapReport(a_only, b_only, N, a_gen, b_gen, label_a=label_a, label_b=label_b)


def gap_analysis(sets: DisagreementSets, verdicts: Mapping, N: int, label_a: str = "A",
                 label_b: str = "B") -> GapReport:
    """Raw and verdict-adjusted gap between two systems, as percentages of ``N``.

    A word only system A got right is a genuine win unless its verdict is one
    of the two missing-gold-target categories; likewise for B.
    """
    missing = [(w, label_a) for w in sets.a_only if (w, label_a) not in verdicts]
    missing += [(w, label_b) for w in sets.b_only if (w, label_b) not in verdicts]
    if missing:
        listing = ", ".join(f"{w} [{lab}]" for w, lab in missing[:10])
        raise BDIError(f"{len(missing)} disagreement words lack a verdict: {listing}")

    def tally(words, label):
        counts = {v.value: 0 for v in Verdict}
        genuine = 0
        for w in words:
            verdict = Verdict(verdicts[(w, label)][0])
            counts[verdict.value] += 1
            genuine += not verdict.false_false_positive
        return counts, genuine

    counts_a, gen_a = tally(sets.a_only, label_a)
    counts_b, gen_b = tally(sets.b_only, label_b)
    return GapReport(len(sets.a_only), len(sets.b_only), N, Fraction(gen_a), Fraction(gen_b),
                     counts_a, counts_b, label_a, label_b)
