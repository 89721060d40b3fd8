"""Command-line entry point: ``bdieval <command> [options]``.

Every command writes a JSON report embedding its effective configuration and
prints a short human-readable summary. Options may also come from a
``key=value`` file given with ``--config``; explicit flags take precedence.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from bdieval import alignment, dictionary, embeddings, enrichment, evaluation, retrieval
from bdieval.errors import BDIError

logger = logging.getLogger("bdieval")

CSLS_QUERY_POOL_LIMIT = 5000

# option dests that name input files, per command
PATH_OPTIONS = ("config", "src_emb", "tgt_emb", "dict", "gold", "annotations", "map", "predictions",
                "verdicts", "pred_a", "pred_b", "src_unimorph", "tgt_unimorph", "corr_map", "vocab")


class UsageError(Exception):
    pass


def _open(path):
    return open(path, encoding="utf-8", errors="surrogateescape", newline="")


def _write_json(path: Path, data) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2, sort_keys=True, ensure_ascii=False)
        f.write("\n")


def _effective_config(args) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose", "required")}


def _out_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_space(path, max_vocab, scheme, lang=""):
    with _open(path) as f:
        space = embeddings.load_embeddings(f, max_vocab=max_vocab, lang=lang)
    return embeddings.normalize(space, scheme)


def _load_gold(args, path):
    with _open(path) as f:
        gold = dictionary.load_dictionary(f, args.src_lang, args.tgt_lang, name=Path(path).name)
    if getattr(args, "annotations", None):
        with _open(args.annotations) as f:
            rows = dictionary.load_annotations(f)
        gold = dictionary.merge_annotations(gold, rows, strict=not args.lenient)
    return gold


def _labelled(values, flag):
    out = {}
    for item in values or []:
        label, sep, path = item.partition("=")
        if not sep or not label or not path:
            raise UsageError(f"{flag} expects LABEL=PATH, got {item!r}")
        out[label] = path
    return out


# --- commands -------------------------------------------------------------------

def cmd_align(args) -> int:
    src = _load_space(args.src_emb, args.max_vocab, args.normalize, args.src_lang)
    tgt = _load_space(args.tgt_emb, args.max_vocab, args.normalize, args.tgt_lang)
    with _open(args.dict) as f:
        seed_dict = dictionary.load_dictionary(f, args.src_lang, args.tgt_lang)
    seeds = alignment.SeedPairs.from_word_pairs([p.key for p in seed_dict.pairs], src, tgt)

    if args.trainer == "procrustes":
        amap = alignment.procrustes_fit(src, tgt, seeds)
    elif args.trainer == "procrustes_refined":
        amap = alignment.refine(src, tgt, seeds, args.rounds, n_frequent=args.refine_vocab,
                                k_csls=args.k_csls, sample_size=args.sample_size)
    else:
        cfg = alignment.RcslsConfig(epochs=args.epochs, lr=args.lr, k=args.rcsls_k, pool=args.rcsls_pool)
        amap = alignment.rcsls_fit(src, tgt, seeds, cfg)
    sel = alignment.selection_score(amap, src, tgt, args.sample_size, threshold=args.degenerate_threshold,
                                    k_csls=args.k_csls)
    meta = dict(amap.meta, normalization=args.normalize, selection_score=sel.score,
                degenerate=int(sel.degenerate))
    amap = alignment.AlignmentMap(amap.W, amap.orthogonal, amap.trainer, meta)

    out = _out_dir(args)
    with open(out / "map.txt", "w", encoding="utf-8") as mf, open(out / "map.meta", "w", encoding="utf-8") as sf:
        alignment.write_map(amap, mf, sf)
    _write_json(out / "align_report.json", {
        "trainer": amap.trainer,
        "orthogonal": amap.orthogonal,
        "meta": {k: v for k, v in meta.items()},
        "selection": {"score": sel.score, "degenerate": sel.degenerate,
                      "sample_size": sel.sample_size, "threshold": sel.threshold},
        "config": _effective_config(args),
    })
    print(f"trainer={amap.trainer} seed_pairs={len(seeds)} dropped_oov={seeds.n_dropped_oov} "
          f"selection_score={sel.score:.4f} degenerate={str(sel.degenerate).lower()}")
    return 0


def _retrieve(args, gold):
    src = _load_space(args.src_emb, args.max_vocab, args.normalize, args.src_lang)
    tgt = _load_space(args.tgt_emb, args.max_vocab, args.normalize, args.tgt_lang)
    with _open(args.map) as mf:
        meta_path = Path(args.map).with_suffix(".meta")
        if meta_path.exists():
            with _open(meta_path) as sf:
                amap = alignment.read_map(mf, sf)
        else:
            amap = alignment.read_map(mf)
    if amap.dim != src.dim:
        raise BDIError(f"map dimension {amap.dim} does not match embeddings ({src.dim})")
    words = [w for w in gold.source_words if w in src]
    if not words:
        raise BDIError("no gold source word is in the source vocabulary")
    queries = amap.apply_unit(src.matrix[[src.index[w] for w in words]])
    common = dict(query_words=words, pool_size=args.pool, block_size=args.block_size, threads=args.threads)
    if args.scoring == "cosine":
        table = retrieval.knn_cosine(queries, tgt, args.retrieve_k, **common)
    else:
        src_pool = None
        if len(words) >= CSLS_QUERY_POOL_LIMIT:
            src_pool = amap.apply_unit(src.matrix[:args.pool])
        table = retrieval.knn_csls(queries, tgt, args.retrieve_k, args.k_csls, src_pool=src_pool, **common)
    return table, amap


def cmd_evaluate(args) -> int:
    gold = _load_gold(args, args.gold)
    if args.predictions:
        with _open(args.predictions) as f:
            table = retrieval.read_predictions(f)
        echo = {"normalization": "external", "trainer": "external", "mode": "external_predictions"}
    else:
        if not (args.map and args.src_emb and args.tgt_emb):
            raise UsageError("evaluate needs --predictions, or --map with --src-emb and --tgt-emb")
        table, amap = _retrieve(args, gold)
        echo = {"normalization": args.normalize, "trainer": amap.trainer, "mode": "retrieval"}
    cfg = evaluation.EvalConfig(k=args.k, oov_policy=args.oov_policy)
    report = evaluation.stratified(table, gold, cfg, echo=echo, system=args.system)

    out = _out_dir(args)
    with open(out / "predictions.tsv", "w", encoding="utf-8", newline="") as f:
        retrieval.write_predictions(table, f)
    data = report.as_dict()
    data["run"] = _effective_config(args)
    _write_json(out / "report.json", data)
    lines = [f"system={args.system} P@{report.k}={report.precision:.2f} evaluated={report.n_evaluated} "
             f"excluded_oov={report.n_excluded_oov}"]
    for tag, r in report.per_tag.items():
        lines.append(f"  {tag:<12}{r.precision:7.2f}  ({r.correct}/{r.n})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    print("\n".join(lines))
    return 0


def cmd_clean(args) -> int:
    gold = _load_gold(args, args.dict)
    cleaned, summary = dictionary.clean(gold)
    out = _out_dir(args)
    with open(out / "cleaned.txt", "w", encoding="utf-8") as f:
        dictionary.write_dictionary(cleaned, f)
    with open(out / "cleaned_annotations.tsv", "w", encoding="utf-8") as f:
        dictionary.write_annotations(cleaned, f)
    with open(out / "clean_summary.txt", "w", encoding="utf-8") as f:
        for key, value in summary.as_dict().items():
            f.write(f"{key}={value}\n")
    _write_json(out / "clean_report.json", {"summary": summary.as_dict(), "config": _effective_config(args)})
    removed = summary.removed_pnoun + summary.removed_invalid
    print(f"removed={removed} (pnoun={summary.removed_pnoun} invalid={summary.removed_invalid}) "
          f"source_words={summary.source_words_before}->{summary.source_words_after}")
    return 0


def cmd_stats(args) -> int:
    dicts = args.dict or []
    anns = args.annotations or []
    if not dicts or len(dicts) != len(anns):
        raise UsageError("stats needs matching --dict/--annotations pairs")
    loaded = []
    for dpath, apath in zip(dicts, anns):
        with _open(dpath) as f:
            d = dictionary.load_dictionary(f, name=Path(dpath).name)
        with _open(apath) as f:
            d = dictionary.merge_annotations(d, dictionary.load_annotations(f), strict=not args.lenient)
        loaded.append(d)
    report = dictionary.composition(loaded, include_enriched=not args.exclude_enriched)
    out = _out_dir(args)
    with open(out / "composition.tsv", "w", encoding="utf-8") as f:
        f.write("dictionary\ttag\tcount\tpercentage\n")
        for name, tag, count, pct in report.rows():
            f.write(f"{name}\t{tag}\t{'' if count is None else count}\t{'' if pct is None else f'{pct:.2f}'}\n")
    _write_json(out / "stats.json", {
        "unit": report.unit,
        "averaging": report.averaging,
        "dictionaries": {dc.name: {"counts": dc.counts, "percentages": {k: round(v, 4) for k, v in dc.percentages.items()},
                                   "annotated": dc.n_annotated, "unannotated": dc.n_unannotated}
                         for dc in report.dictionaries},
        "macro": {k: round(v, 4) for k, v in report.macro.items()},
        "config": _effective_config(args),
    })
    print("macro " + " ".join(f"{k}={v:.1f}" for k, v in report.macro.items()))
    return 0


def _load_reports(mapping):
    reports = {}
    for label, path in mapping.items():
        with _open(path) as f:
            reports[label] = evaluation.EvaluationReport.from_dict(json.load(f))
    return reports


def cmd_compare(args) -> int:
    original = _load_reports(_labelled(args.report, "--report"))
    cleaned = _load_reports(_labelled(args.cleaned_report, "--cleaned-report")) if args.cleaned_report else None
    if not original:
        raise UsageError("compare needs at least one --report")
    rows = evaluation.compare(original, args.baseline, cleaned)
    out = _out_dir(args)
    with open(out / "delta.tsv", "w", encoding="utf-8", newline="") as f:
        evaluation.write_delta_table(rows, f)
    _write_json(out / "compare.json", {
        "baseline": args.baseline,
        "rows": [vars(r) for r in rows],
        "config": _effective_config(args),
    })
    for r in rows:
        line = f"{r.system}: delta={r.delta_original:+.2f}"
        if r.delta_cleaned is not None:
            line += f" cleaned_delta={r.delta_cleaned:+.2f}"
        print(line)
    return 0


def cmd_gap(args) -> int:
    if args.a_only is not None or args.b_only is not None:
        if args.a_only is None or args.b_only is None or args.n is None:
            raise UsageError("count mode needs --a-only, --b-only and --n")
        report = evaluation.gap_from_counts(args.a_only, args.b_only, args.n, args.a_genuine,
                                            args.b_genuine, args.label_a, args.label_b)
    else:
        if not (args.pred_a and args.pred_b and args.gold and args.verdicts):
            raise UsageError("gap needs --pred-a, --pred-b, --gold and --verdicts (or count mode)")
        gold = _load_gold(args, args.gold)
        with _open(args.pred_a) as f:
            pa = retrieval.read_predictions(f)
        with _open(args.pred_b) as f:
            pb = retrieval.read_predictions(f)
        with _open(args.verdicts) as f:
            verdicts = evaluation.load_verdicts(f)
        sets = evaluation.disagreements(pa, pb, gold, args.oov_policy)
        n = args.n if args.n is not None else gold.source_word_count
        report = evaluation.gap_analysis(sets, verdicts, n, args.label_a, args.label_b)
    out = _out_dir(args)
    _write_json(out / "gap.json", dict(report.as_dict(), config=_effective_config(args)))
    print(" ".join(report.summary_lines()))
    return 0


def cmd_enrich(args) -> int:
    gold = _load_gold(args, args.dict)
    with _open(args.src_unimorph) as f:
        src_table = enrichment.load_unimorph(f)
    with _open(args.tgt_unimorph) as f:
        tgt_table = enrichment.load_unimorph(f)
    with _open(args.corr_map) as f:
        cmap = enrichment.load_correspondence_map(f)
    with _open(args.vocab) as f:
        vocab = embeddings.load_embeddings(f, max_vocab=args.max_vocab)
    enriched, log = enrichment.enrich(gold, src_table, tgt_table, cmap, vocab)
    log.check()
    out = _out_dir(args)
    with open(out / "enriched.txt", "w", encoding="utf-8") as f:
        dictionary.write_dictionary(enriched, f)
    with open(out / "enriched_annotations.tsv", "w", encoding="utf-8") as f:
        dictionary.write_annotations(enriched, f)
    with open(out / "enrichment_log.tsv", "w", encoding="utf-8") as f:
        log.write_tsv(f)
    counts = {"added": len(log.added), "candidates": log.n_candidates,
              **{reason: log.count(reason) for reason in enrichment.SKIP_REASONS}}
    _write_json(out / "enrich_report.json", {
        "counts": counts,
        "source_bundle_lookup": "source-language paradigm table",
        "config": _effective_config(args),
    })
    print(" ".join(f"{k}={v}" for k, v in counts.items()))
    return 0


# --- parser -----------------------------------------------------------------------

def _common(p, *, emb=False, langs=True):
    p.add_argument("--config", help="key=value file supplying defaults for any option")
    p.add_argument("--output-dir", default=".", help="directory for reports (default: .)")
    p.add_argument("--seed", type=int, default=0, help="random seed (default: 0)")
    p.add_argument("-v", "--verbose", action="store_true")
    if langs:
        p.add_argument("--src-lang", default="")
        p.add_argument("--tgt-lang", default="")
    if emb:
        p.add_argument("--src-emb")
        p.add_argument("--tgt-emb")
        p.add_argument("--normalize", choices=("unit", "centered_unit"), default="unit")
        p.add_argument("--max-vocab", type=int, default=embeddings.DEFAULT_MAX_VOCAB)
        p.add_argument("--k-csls", type=int, default=retrieval.DEFAULT_K_CSLS)
        p.add_argument("--threads", type=int, default=retrieval.default_threads(),
                       help="worker threads for retrieval (default: $BDIEVAL_THREADS or 1)")


def _annotation_opts(p):
    p.add_argument("--annotations", help="annotation TSV (source, target, pos, valid)")
    p.add_argument("--lenient", action="store_true", help="skip annotation rows matching no pair")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bdieval", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="learn a source-to-target map")
    _common(p, emb=True)
    p.add_argument("--dict", help="seed dictionary")
    p.add_argument("--trainer", choices=("procrustes", "procrustes_refined", "rcsls"),
                   default="procrustes_refined")
    p.add_argument("--rounds", type=int, default=alignment.DEFAULT_ROUNDS)
    p.add_argument("--refine-vocab", type=int, default=alignment.DEFAULT_REFINE_VOCAB)
    p.add_argument("--sample-size", type=int, default=alignment.DEFAULT_SAMPLE_SIZE)
    p.add_argument("--degenerate-threshold", type=float, default=0.0)
    p.add_argument("--epochs", type=int, default=alignment.RcslsConfig.epochs)
    p.add_argument("--lr", type=float, default=alignment.RcslsConfig.lr)
    p.add_argument("--rcsls-k", type=int, default=alignment.RcslsConfig.k)
    p.add_argument("--rcsls-pool", type=int, default=alignment.RcslsConfig.pool)
    p.set_defaults(func=cmd_align, required=("src_emb", "tgt_emb", "dict"))

    p = sub.add_parser("evaluate", help="retrieve translations and score P@k")
    _common(p, emb=True)
    _annotation_opts(p)
    p.add_argument("--gold", help="gold dictionary")
    p.add_argument("--map", help="alignment matrix file (sidecar .meta read when present)")
    p.add_argument("--predictions", help="external prediction table TSV (skips retrieval)")
    p.add_argument("--system", default="", help="system label recorded in the report")
    p.add_argument("--scoring", choices=("csls", "cosine"), default="csls")
    p.add_argument("--k", type=int, default=1, help="k of P@k")
    p.add_argument("--retrieve-k", type=int, default=10, help="length of retrieved lists")
    p.add_argument("--pool", type=int, default=embeddings.DEFAULT_MAX_VOCAB, help="candidate pool cap")
    p.add_argument("--block-size", type=int, default=retrieval.DEFAULT_BLOCK_SIZE)
    p.add_argument("--oov-policy", choices=evaluation.OOV_POLICIES, default="exclude")
    p.set_defaults(func=cmd_evaluate, required=("gold",))

    p = sub.add_parser("clean", help="remove proper-noun and invalid pairs")
    _common(p)
    _annotation_opts(p)
    p.add_argument("--dict")
    p.set_defaults(func=cmd_clean, required=("dict",))

    p = sub.add_parser("stats", help="POS composition of annotated dictionaries")
    _common(p, langs=False)
    p.add_argument("--dict", action="append", help="dictionary (repeatable)")
    p.add_argument("--annotations", action="append", help="annotation TSV matching each --dict")
    p.add_argument("--lenient", action="store_true")
    p.add_argument("--exclude-enriched", action="store_true")
    p.set_defaults(func=cmd_stats, required=())

    p = sub.add_parser("compare", help="P@k differences relative to a baseline system")
    _common(p, langs=False)
    p.add_argument("--report", action="append", help="LABEL=report.json on original data (repeatable)")
    p.add_argument("--cleaned-report", action="append", help="LABEL=report.json on cleaned data")
    p.add_argument("--baseline")
    p.set_defaults(func=cmd_compare, required=("baseline",))

    p = sub.add_parser("gap", help="raw and verdict-adjusted gap between two systems")
    _common(p)
    _annotation_opts(p)
    p.add_argument("--pred-a")
    p.add_argument("--pred-b")
    p.add_argument("--gold")
    p.add_argument("--verdicts", help="verdict TSV (source, system_label, category, note)")
    p.add_argument("--label-a", default="A")
    p.add_argument("--label-b", default="B")
    p.add_argument("--oov-policy", choices=evaluation.OOV_POLICIES, default="exclude")
    p.add_argument("--a-only", type=int, help="count mode: words only system A got right")
    p.add_argument("--b-only", type=int)
    p.add_argument("--n", type=int, help="total number of source words")
    p.add_argument("--a-genuine", type=float, help="count mode: genuine wins among --a-only")
    p.add_argument("--b-genuine", type=float)
    p.set_defaults(func=cmd_gap, required=())

    p = sub.add_parser("enrich", help="add inflectional variants to gold targets")
    _common(p)
    _annotation_opts(p)
    p.add_argument("--dict")
    p.add_argument("--src-unimorph")
    p.add_argument("--tgt-unimorph")
    p.add_argument("--corr-map", help="correspondence map file")
    p.add_argument("--vocab", help="target embedding file whose vocabulary licenses additions")
    p.add_argument("--max-vocab", type=int, default=embeddings.DEFAULT_MAX_VOCAB)
    p.set_defaults(func=cmd_enrich, required=("dict", "src_unimorph", "tgt_unimorph", "corr_map", "vocab"))
    return parser


def _read_config(path) -> dict:
    values = {}
    with _open(path) as f:
        for lineno, line in enumerate(f, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise UsageError(f"{path}:{lineno}: expected key=value")
            values[key.strip().replace("-", "_")] = value.strip()
    return values


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        if not Path(args.config).is_file():
            raise FileNotFoundError(args.config)
        values = _read_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest: a for a in sub._actions}
        for key, value in values.items():
            action = known.get(key)
            if action is None or key in ("config", "help"):
                raise UsageError(f"unknown configuration key {key!r} for {args.command}")
            if action.nargs == 0:
                value = value.lower() in ("1", "true", "yes", "on")
            elif isinstance(action, argparse._AppendAction):
                value = [v.strip() for v in value.split(",") if v.strip()]
            sub.set_defaults(**{key: value})
        args = parser.parse_args(argv)
    return args


def main(argv=None) -> int:
    try:
        args = _parse(argv)
    except FileNotFoundError as exc:
        print(f"bdieval: error: no such file: {exc.args[0]}", file=sys.stderr)
        return 2
    except UsageError as exc:
        print(f"bdieval: error: {exc}", file=sys.stderr)
        return 2
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    np.random.seed(args.seed)

    missing_opts = [o for o in args.required if getattr(args, o, None) in (None, [], "")]
    if missing_opts:
        print(f"bdieval: error: missing required option(s): "
              f"{', '.join('--' + o.replace('_', '-') for o in missing_opts)}", file=sys.stderr)
        return 2
    for dest in PATH_OPTIONS:
        values = getattr(args, dest, None)
        for value in values if isinstance(values, list) else [values]:
            if value and not Path(value).exists():
                print(f"bdieval: error: no such file: {value}", file=sys.stderr)
                return 2
    for dest in ("report", "cleaned_report"):
        for item in getattr(args, dest, None) or []:
            path = item.partition("=")[2]
            if path and not Path(path).exists():
                print(f"bdieval: error: no such file: {path}", file=sys.stderr)
                return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"bdieval: error: {exc}", file=sys.stderr)
        return 2
    except (BDIError, ValueError, OSError) as exc:
        print(f"bdieval: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
