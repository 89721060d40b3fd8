"""Gold-target enrichment from UniMorph paradigms and a feature correspondence map."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from typing import TextIO

from bdieval.dictionary import AnnotatedDictionary
from bdieval.embeddings import EmbeddingSpace
from bdieval.errors import BDIError, FormatError

logger = logging.getLogger(__name__)

_FEATURE = re.compile(r"^[A-Z0-9][A-Z0-9.+_/{}()\-]*$")

SKIP_REASONS = ("not_in_vocab", "already_present", "no_paradigm", "no_rule")


def valid_bundle(bundle: str) -> bool:
    """Non-empty, semicolon-separated, upper-case feature tokens (``V;IND;PRS;3;PL``)."""
    return bool(bundle) and all(_FEATURE.match(tok) for tok in bundle.split(";"))


@dataclass(frozen=True, eq=False)
class ParadigmTable:
    entries: tuple
    n_malformed: int = 0
    by_form: dict = field(init=False, repr=False)
    by_lemma: dict = field(init=False, repr=False)

    def __post_init__(self):
        by_form, by_lemma = {}, {}
        for lemma, form, bundle in self.entries:
            by_form.setdefault(form, []).append((lemma, bundle))
            by_lemma.setdefault(lemma, []).append((form, bundle))
        object.__setattr__(self, "by_form", by_form)
        object.__setattr__(self, "by_lemma", by_lemma)

    def __len__(self):
        return len(self.entries)

    def analyses(self, form: str) -> list:
        """(lemma, bundle) readings of a surface form."""
        return self.by_form.get(form, [])

    def paradigm(self, lemma: str) -> list:
        """(form, bundle) cells of a lemma, variants included, in file order."""
        return self.by_lemma.get(lemma, [])


def load_unimorph(stream: TextIO) -> ParadigmTable:
    """Read ``lemma<TAB>form<TAB>bundle`` rows; malformed rows are skipped and counted."""
    entries = []
    seen = set()
    bad = 0
    for line in stream:
        line = line.rstrip("\n").rstrip("\r")
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(p.strip() for p in parts):
            bad += 1
            continue
        lemma, form, bundle = (p.strip() for p in parts)
        if not valid_bundle(bundle):
            bad += 1
            continue
        if (lemma, form, bundle) in seen:
            continue
        seen.add((lemma, form, bundle))
        entries.append((lemma, form, bundle))
    if bad:
        logger.warning("%d malformed UniMorph rows skipped", bad)
    if not entries:
        raise FormatError("no usable UniMorph rows")
    return ParadigmTable(tuple(entries), bad)


@dataclass(frozen=True)
class CorrespondenceMap:
    rules: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rules)

    def targets(self, bundle: str) -> tuple:
        return self.rules.get(bundle, ())


def load_correspondence_map(stream: TextIO) -> CorrespondenceMap:
    """Parse a correspondence map.

    Two layouts are accepted. TSV rows ``src_bundle<TAB>tgt_bundle`` accumulate
    per source bundle. In the block layout an unindented line opens a rule
    (``SRC`` or ``SRC TGT``) and each indented line adds one target bundle; a
    source bundle opened twice must list the same targets.
    """
    lines = [(n, l.rstrip("\n").rstrip("\r")) for n, l in enumerate(stream, start=1)]
    lines = [(n, l) for n, l in lines if l.strip() and not l.lstrip().startswith("#")]
    rules = {}

    def check(bundle, lineno):
        if not valid_bundle(bundle):
            raise FormatError(f"malformed feature bundle {bundle!r}", lineno)

    if any("\t" in l.strip() for _, l in lines):
        for lineno, line in lines:
            parts = [p.strip() for p in line.split("\t")]
            if len(parts) != 2:
                raise FormatError(f"expected 2 tab-separated fields, found {len(parts)}", lineno)
            src, tgt = parts
            check(src, lineno)
            check(tgt, lineno)
            targets = rules.setdefault(src, [])
            if tgt not in targets:
                targets.append(tgt)
        return CorrespondenceMap({s: tuple(t) for s, t in rules.items()})

    blocks = []
    for lineno, line in lines:
        parts = line.split()
        if line[0].isspace():
            if not blocks:
                raise FormatError("target bundle before any source bundle", lineno)
            if len(parts) != 1:
                raise FormatError("expected one target bundle per indented line", lineno)
            check(parts[0], lineno)
            blocks[-1][2].append(parts[0])
        else:
            if len(parts) > 2:
                raise FormatError("expected 'SRC' or 'SRC TGT'", lineno)
            for p in parts:
                check(p, lineno)
            blocks.append((lineno, parts[0], parts[1:]))
    for lineno, src, targets in blocks:
        targets = tuple(dict.fromkeys(targets))
        if src in rules and rules[src] != targets:
            raise BDIError(f"line {lineno}: source bundle {src} redefined with different targets")
        rules[src] = targets
    return CorrespondenceMap(rules)


@dataclass(frozen=True)
class EnrichmentRecord:
    source: str
    seed_target: str
    outcome: str
    form: str = ""
    bundle: str = ""
    lemma: str = ""


@dataclass
class EnrichmentLog:
    records: list = field(default_factory=list)
    n_candidates: int = 0

    @property
    def added(self) -> list:
        return [r for r in self.records if r.outcome == "added"]

    def count(self, outcome: str) -> int:
        return sum(r.outcome == outcome for r in self.records)

    def check(self) -> None:
        """Every generated candidate form is either added or skipped, exactly once."""
        candidates = [r for r in self.records if r.form]
        assert len(candidates) == self.n_candidates, "candidate count mismatch"
        assert all(r.outcome in ("added", "not_in_vocab", "already_present") for r in candidates)

    def write_tsv(self, stream: TextIO) -> None:
        stream.write("source\tseed_target\toutcome\tform\tbundle\tlemma\n")
        for r in self.records:
            stream.write(f"{r.source}\t{r.seed_target}\t{r.outcome}\t{r.form}\t{r.bundle}\t{r.lemma}\n")


def enrich(d: AnnotatedDictionary, src_table: ParadigmTable, tgt_table: ParadigmTable,
           cmap: CorrespondenceMap, vocab) -> tuple:
    """Add inflected variants of gold targets licensed by ``cmap``.

    For a pair (s, t), each bundle of s in ``src_table`` that has a rule selects
    target bundles; every paradigm of ``tgt_table`` containing t contributes its
    forms with those bundles. A form is added when it is in ``vocab`` and not
    already a target of s. New pairs copy the seed pair's annotations, carry
    ``provenance="enriched"`` and are appended after the existing pairs.
    """
    in_vocab = vocab.index if isinstance(vocab, EmbeddingSpace) else vocab
    log = EnrichmentLog()
    if not cmap.rules:
        return d, log
    present = {s: set(ts) for s, ts in d.index.items()}
    added = []
    for pair in d.pairs:
        s, t = pair.source, pair.target
        bundles = list(dict.fromkeys(b for _, b in src_table.analyses(s)))
        ruled = [b for b in bundles if b in cmap.rules]
        if not ruled:
            log.records.append(EnrichmentRecord(s, t, "no_rule"))
            continue
        lemmas = list(dict.fromkeys(lemma for lemma, _ in tgt_table.analyses(t)))
        if not lemmas:
            log.records.append(EnrichmentRecord(s, t, "no_paradigm"))
            continue
        for bundle in ruled:
            wanted = set(cmap.targets(bundle))
            for lemma in lemmas:
                for form, tgt_bundle in tgt_table.paradigm(lemma):
                    if tgt_bundle not in wanted:
                        continue
                    log.n_candidates += 1
                    if form in present[s]:
                        outcome = "already_present"
                    elif form not in in_vocab:
                        outcome = "not_in_vocab"
                    else:
                        outcome = "added"
                        present[s].add(form)
                        added.append(replace(pair, target=form, provenance="enriched"))
                    log.records.append(EnrichmentRecord(s, t, outcome, form, tgt_bundle, lemma))
    if added:
        logger.info("enrichment added %d target forms", len(added))
    return d.with_pairs(d.pairs + tuple(added)), log
