"""MUSE-format bilingual dictionaries with part-of-speech and validity annotations."""
from __future__ import annotations

import csv
import hashlib
import logging
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, Optional, Sequence, TextIO

from bdieval.errors import BDIError, FormatError

logger = logging.getLogger(__name__)

ANNOTATION_COLUMNS = ("source", "target", "pos", "valid")


class PosTag(str, Enum):
    NOUN = "NOUN"
    PNOUN = "PNOUN"
    VERB = "VERB"
    AD = "AD"
    OTHER = "OTHER"

    def __str__(self):
        return self.value


@dataclass(frozen=True)
class AnnotatedPair:
    source: str
    target: str
    pos: Optional[PosTag] = None
    valid: Optional[bool] = None
    provenance: str = "gold"

    def __post_init__(self):
        for word in (self.source, self.target):
            if not word or any(ch.isspace() for ch in word):
                raise ValueError(f"invalid dictionary word {word!r}")
        if self.pos is not None and not isinstance(self.pos, PosTag):
            object.__setattr__(self, "pos", PosTag(self.pos))

    @property
    def key(self):
        return self.source, self.target

    @property
    def annotated(self) -> bool:
        return self.pos is not None or self.valid is not None


@dataclass(frozen=True, eq=False)
class AnnotatedDictionary:
    pairs: tuple
    src_lang: str = ""
    tgt_lang: str = ""
    name: str = ""
    n_duplicates: int = 0
    index: dict = field(init=False, repr=False)

    def __post_init__(self):
        pairs = tuple(self.pairs)
        index = {}
        seen = set()
        for p in pairs:
            if p.key in seen:
                raise ValueError(f"duplicate pair {p.source} {p.target}")
            seen.add(p.key)
            index.setdefault(p.source, []).append(p.target)
        object.__setattr__(self, "pairs", pairs)
        object.__setattr__(self, "index", {s: tuple(t) for s, t in index.items()})

    def __len__(self):
        return len(self.pairs)

    def __eq__(self, other):
        if not isinstance(other, AnnotatedDictionary):
            return NotImplemented
        return self.pairs == other.pairs and self.direction == other.direction

    @property
    def direction(self):
        return self.src_lang, self.tgt_lang

    @property
    def source_words(self) -> tuple:
        return tuple(self.index)

    @property
    def pair_count(self) -> int:
        return len(self.pairs)

    @property
    def source_word_count(self) -> int:
        return len(self.index)

    @property
    def n_unannotated(self) -> int:
        return sum(not p.annotated for p in self.pairs)

    def targets(self, word: str) -> tuple:
        return self.index.get(word, ())

    def pairs_of(self, word: str) -> list:
        return [p for p in self.pairs if p.source == word]

    def fingerprint(self) -> str:
        """Stable identity of the (source, target) content, used to match reports."""
        h = hashlib.sha1()
        for p in self.pairs:
            h.update(f"{p.source}\t{p.target}\n".encode("utf-8"))
        return h.hexdigest()[:16]

    def with_pairs(self, pairs) -> "AnnotatedDictionary":
        return AnnotatedDictionary(tuple(pairs), self.src_lang, self.tgt_lang, self.name)


def load_dictionary(stream: TextIO, src_lang: str = "", tgt_lang: str = "",
                    name: str = "") -> AnnotatedDictionary:
    """Read ``source<whitespace>target`` lines; repeated pairs are dropped and counted."""
    pairs = []
    seen = set()
    n_dup = 0
    for lineno, line in enumerate(stream, start=1):
        fields = line.split()
        if not fields:
            continue
        if len(fields) != 2:
            raise FormatError(f"expected 2 fields, found {len(fields)}", lineno)
        key = (fields[0], fields[1])
        if key in seen:
            n_dup += 1
            continue
        seen.add(key)
        pairs.append(AnnotatedPair(*key))
    if n_dup:
        logger.warning("%d duplicate dictionary pairs dropped", n_dup)
    return AnnotatedDictionary(tuple(pairs), src_lang, tgt_lang, name, n_duplicates=n_dup)


def write_dictionary(d: AnnotatedDictionary, stream: TextIO) -> None:
    for p in d.pairs:
        stream.write(f"{p.source} {p.target}\n")


@dataclass(frozen=True)
class AnnotationRow:
    source: str
    target: str
    pos: PosTag
    valid: bool
    lineno: int = 0


def load_annotations(stream: TextIO) -> list:
    reader = csv.reader(stream, delimiter="\t", quoting=csv.QUOTE_NONE)
    header = next(reader, None)
    if header is None or tuple(h.strip() for h in header) != ANNOTATION_COLUMNS:
        raise FormatError("annotation header must be: source, target, pos, valid", 1)
    rows = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != 4:
            raise FormatError(f"expected 4 fields, found {len(row)}", lineno)
        source, target, pos, valid = (f.strip() for f in row)
        try:
            tag = PosTag(pos)
        except ValueError:
            raise FormatError(f"unknown POS tag {pos!r}", lineno) from None
        if valid not in ("0", "1"):
            raise FormatError(f"valid must be 1 or 0, got {valid!r}", lineno)
        rows.append(AnnotationRow(source, target, tag, valid == "1", lineno))
    return rows


def write_annotations(d: AnnotatedDictionary, stream: TextIO) -> None:
    """Write the annotated pairs; pairs lacking either field are left out."""
    stream.write("\t".join(ANNOTATION_COLUMNS) + "\n")
    for p in d.pairs:
        if p.pos is not None and p.valid is not None:
            stream.write(f"{p.source}\t{p.target}\t{p.pos}\t{int(p.valid)}\n")


class AnnotationMismatchError(BDIError):
    def __init__(self, rows):
        self.rows = list(rows)
        listing = ", ".join(f"line {r.lineno}: {r.source} {r.target}" for r in self.rows[:10])
        more = "" if len(self.rows) <= 10 else f" (+{len(self.rows) - 10} more)"
        super().__init__(f"{len(self.rows)} annotation rows match no dictionary pair: {listing}{more}")


def merge_annotations(d: AnnotatedDictionary, annotations: Iterable[AnnotationRow],
                      strict: bool = True) -> AnnotatedDictionary:
    """Set pos/valid on the pairs named by ``annotations``; order and membership are untouched."""
    keys = {p.key for p in d.pairs}
    updates = {}
    unmatched = []
    for row in annotations:
        if (row.source, row.target) in keys:
            updates[(row.source, row.target)] = row
        else:
            unmatched.append(row)
    if unmatched:
        if strict:
            raise AnnotationMismatchError(unmatched)
        logger.warning("%d annotation rows match no dictionary pair and were skipped", len(unmatched))
    pairs = []
    for p in d.pairs:
        row = updates.get(p.key)
        pairs.append(p if row is None else replace(p, pos=row.pos, valid=row.valid))
    merged = d.with_pairs(pairs)
    if merged.n_unannotated:
        logger.info("%d dictionary pairs remain unannotated", merged.n_unannotated)
    return merged


def reduce_pretag(fine_tag: str) -> PosTag:
    """Collapse a Penn Treebank tag to the five-way schema."""
    tag = fine_tag.strip().upper()
    if tag in ("NNP", "NNPS"):
        return PosTag.PNOUN
    if tag in ("NN", "NNS"):
        return PosTag.NOUN
    if tag.startswith("VB"):
        return PosTag.VERB
    if tag.startswith("JJ") or tag.startswith("RB"):
        return PosTag.AD
    return PosTag.OTHER


@dataclass(frozen=True)
class RemovalSummary:
    pairs_before: int
    pairs_after: int
    removed_pnoun: int
    removed_invalid: int
    kept_unannotated: int
    source_words_before: int
    source_words_after: int

    @property
    def source_word_drop_pct(self) -> float:
        if not self.source_words_before:
            return 0.0
        return 100.0 * (self.source_words_before - self.source_words_after) / self.source_words_before

    def as_dict(self) -> dict:
        return {
            "pairs_before": self.pairs_before,
            "pairs_after": self.pairs_after,
            "removed_pnoun": self.removed_pnoun,
            "removed_invalid": self.removed_invalid,
            "kept_unannotated": self.kept_unannotated,
            "source_words_before": self.source_words_before,
            "source_words_after": self.source_words_after,
            "source_word_drop_pct": round(self.source_word_drop_pct, 2),
        }


def clean(d: AnnotatedDictionary) -> tuple:
    """Drop proper-noun pairs and pairs marked invalid.

    Unannotated pairs are kept. A pair that is both a proper noun and invalid
    is counted once, as a proper noun.
    """
    kept = []
    n_pnoun = n_invalid = 0
    for p in d.pairs:
        if p.pos is PosTag.PNOUN:
            n_pnoun += 1
        elif p.valid is False:
            n_invalid += 1
        else:
            kept.append(p)
    out = d.with_pairs(kept)
    summary = RemovalSummary(
        pairs_before=d.pair_count, pairs_after=out.pair_count,
        removed_pnoun=n_pnoun, removed_invalid=n_invalid,
        kept_unannotated=out.n_unannotated,
        source_words_before=d.source_word_count, source_words_after=out.source_word_count,
    )
    return out, summary


# --- composition ---------------------------------------------------------------

@dataclass(frozen=True)
class DictComposition:
    name: str
    counts: dict
    n_annotated: int
    n_unannotated: int

    @property
    def percentages(self) -> dict:
        if not self.n_annotated:
            return {tag.value: 0.0 for tag in PosTag}
        return {tag: 100.0 * c / self.n_annotated for tag, c in self.counts.items()}


@dataclass(frozen=True)
class CompositionReport:
    dictionaries: tuple
    macro: dict
    unit: str = "pairs"
    averaging: str = "macro over dictionaries"

    def rows(self):
        """TSV-ready rows: dictionary, tag, count, percentage."""
        for dc in self.dictionaries:
            pct = dc.percentages
            for tag in PosTag:
                yield dc.name, tag.value, dc.counts[tag.value], pct[tag.value]
            yield dc.name, "UNANNOTATED", dc.n_unannotated, None
        for tag in PosTag:
            yield "MACRO", tag.value, None, self.macro[tag.value]


def composition(dicts: Sequence[AnnotatedDictionary], include_enriched: bool = True) -> CompositionReport:
    """Share of each POS tag among annotated pairs, per dictionary and macro-averaged."""
    if isinstance(dicts, AnnotatedDictionary):
        dicts = [dicts]
    if not dicts:
        raise BDIError("no dictionaries given")
    parts = []
    for i, d in enumerate(dicts):
        pairs = [p for p in d.pairs if include_enriched or p.provenance != "enriched"]
        counts = {tag.value: 0 for tag in PosTag}
        n_ann = 0
        for p in pairs:
            if p.pos is not None:
                counts[p.pos.value] += 1
                n_ann += 1
        name = d.name or f"dict{i + 1}"
        if n_ann == 0:
            raise BDIError(f"dictionary {name} carries no POS annotations")
        if n_ann < 0.9 * len(pairs):
            logger.warning("%s: only %d of %d pairs carry a POS tag", name, n_ann, len(pairs))
        parts.append(DictComposition(name, counts, n_ann, len(pairs) - n_ann))
    macro = {tag.value: sum(p.percentages[tag.value] for p in parts) / len(parts) for tag in PosTag}
    return CompositionReport(tuple(parts), macro)


# --- intersection -----------------------------------------------------------------

def _tags_by_word(d):
    tags = {}
    for p in d.pairs:
        tags.setdefault(p.source, set()).add(p.pos)
    return tags


def intersect(a: AnnotatedDictionary, b: AnnotatedDictionary, pos_filter: Optional[PosTag] = None,
              mode: str = "pair") -> list:
    """Entries shared by two dictionaries.

    ``mode="pair"`` matches whole (source, target) pairs and needs identical
    directions; the result lists (source, target) tuples. ``mode="source"``
    matches source words of dictionaries sharing a source language (e.g. two
    dictionaries out of English) and lists the shared source words. With
    ``pos_filter`` an entry must carry that tag in both dictionaries.
    Results follow the order of ``a``.
    """
    if mode == "pair":
        if a.direction != b.direction:
            raise BDIError(f"pair mode needs identical directions, got {a.direction} and {b.direction}")
        b_pairs = {p.key: p for p in b.pairs}
        out = []
        for p in a.pairs:
            q = b_pairs.get(p.key)
            if q is None:
                continue
            if pos_filter is not None and (p.pos != pos_filter or q.pos != pos_filter):
                continue
            out.append(p.key)
        return out
    if mode == "source":
        if a.src_lang != b.src_lang:
            raise BDIError(f"source mode needs a shared source language, got {a.src_lang!r} and {b.src_lang!r}")
        tags_a, tags_b = _tags_by_word(a), _tags_by_word(b)
        out = []
        for word in a.source_words:
            if word not in b.index:
                continue
            if pos_filter is not None and (pos_filter not in tags_a[word]
                                           or pos_filter not in tags_b[word]):
                continue
            out.append(word)
        return out
    raise ValueError(f"unknown intersection mode {mode!r}")
