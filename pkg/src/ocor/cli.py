"""Command-line entry point: ``ocor <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Sequence

import numpy as np

from . import corpus, evaluation, overlap, training
from .config import ConfigError, RunConfig, load_run_config
from .model import ModelConfig, ModelParams, describe, init_params
from .numerics import CheckpointError, load_checkpoint

log = logging.getLogger("ocor")

CHECKPOINT_NAME = "checkpoint.ckpt"


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers


def _load_pairs(path: str | None, what: str = "corpus") -> list[corpus.RawPair]:
    if not path:
        raise CliError(f"no {what} given")
    if not Path(path).exists():
        raise CliError(f"{what} file not found: {path}")
    return corpus.load_corpus(path)


def load_params(path: str | Path) -> tuple[ModelParams, dict]:
    if not Path(path).exists():
        raise CliError(f"checkpoint not found: {path}")
    arrays, header = load_checkpoint(path)
    cfg = ModelConfig.from_dict(header["config"])
    return ModelParams.from_arrays(cfg, arrays), header


def _json_dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _parse_sets(items: Sequence[str] | None) -> dict[str, str]:
    out = {}
    for item in items or ():
        if "=" not in item:
            raise CliError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def _rank_cases(cases, params, threads: int):
    def one(case):
        return evaluation.rank_case(case, params)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, cases))
    return [one(c) for c in cases]


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args) -> int:
    pairs = _load_pairs(args.corpus)
    out = Path(args.out)
    nl_counts, code_counts = [], []
    with out.open("w", encoding="utf-8") as fh:
        for p in pairs:
            q = corpus.tokenize(p.question, corpus.NATURAL_LANGUAGE)
            c = corpus.tokenize(p.code, corpus.CODE)
            nl_counts.append(len(q))
            code_counts.append(len(c))
            fh.write(json.dumps({"id": p.id, "question_tokens": q, "code_tokens": c}, ensure_ascii=False) + "\n")
    stats = corpus_stats(nl_counts, code_counts)
    table = "".join(f"{k}\t{v}\n" for k, v in stats.items())
    sys.stdout.write(table)
    stats_path = out.with_name(out.name + ".stats.tsv")
    stats_path.write_text(table, encoding="utf-8")
    if not args.no_figures and pairs:
        from .plotting import token_histograms

        token_histograms(nl_counts, code_counts, out.with_name(out.name + ".tokens.png"))
    return 0


def corpus_stats(nl_counts: Sequence[int], code_counts: Sequence[int]) -> dict[str, object]:
    def avg(xs):
        return f"{np.mean(xs):.2f}" if len(xs) else "0.00"

    return {
        "Number of QC-pairs": len(nl_counts),
        "Avg. tokens in description": avg(nl_counts),
        "Max. tokens in description": max(nl_counts, default=0),
        "Avg. tokens in code": avg(code_counts),
        "Max. tokens in code": max(code_counts, default=0),
    }


def _run_config(args) -> RunConfig:
    flags = _parse_sets(getattr(args, "set", None))
    for key in ("corpus", "dev_corpus", "dev_cases", "epochs", "seed", "lr", "out", "lam"):
        value = getattr(args, key, None)
        if value is not None:
            flags[key] = value
    return load_run_config(args.config, flags)


def cmd_train(args) -> int:
    run = _run_config(args)
    run.validate()
    sys.stdout.write(run.render())
    pairs = _load_pairs(run.corpus)
    out_dir = Path(run.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.txt").write_text(run.render(), encoding="utf-8")

    dev_eval = None
    if run.dev_cases:
        dev_pairs = _load_pairs(run.dev_corpus or run.corpus, "dev corpus")
        dev_cases = corpus.load_cases(run.dev_cases, dev_pairs, run.model.char_len)

        def dev_eval(params):
            return evaluation.mrr(_rank_cases(dev_cases, params, run.threads))

    params = init_params(run.model, seed=run.seed)
    result = training.train(
        run.train,
        pairs,
        params,
        dev_eval=dev_eval,
        checkpoint_path=out_dir / CHECKPOINT_NAME,
        log_path=out_dir / "train_log.jsonl",
    )
    if result.losses:
        sys.stdout.write(f"final mean loss\t{result.losses[-1]:.6f}\n")
    sys.stdout.write(f"checkpoint\t{out_dir / CHECKPOINT_NAME}\n")
    if not args.no_figures and result.losses:
        from .plotting import loss_curve

        loss_curve(result.losses, out_dir / "loss_curve.png", result.dev_mrr)
    return 0


def cmd_eval(args) -> int:
    params, header = load_params(args.checkpoint)
    seed = header.get("extra", {}).get("seed")
    pairs = _load_pairs(args.corpus)
    if args.cases:
        cases = corpus.load_cases(args.cases, pairs, params.config.char_len)
    else:
        k = min(args.negatives, len(pairs) - 1)
        cases = corpus.build_cases(pairs, k, seed=args.seed, char_len=params.config.char_len)
    if not cases:
        raise CliError("no retrieval cases to evaluate")
    lam = args.lam

    own = _rank_cases(cases, params, args.threads)
    own_scores = {r.case_id: r.scores for r in own}
    report = {
        "seed": seed,
        "n_cases": len(cases),
        "lambda": lam,
        "mrr": evaluation.mrr(own),
        "cases": [{"case_id": r.case_id, "positive_rank": r.positive_rank} for r in own],
        "ensembles": {},
    }
    lines = [f"OCoR\tMRR\t{report['mrr']:.4f}"]
    by_model = {"ocor": own}
    for path in args.scores or ():
        sf = evaluation.load_score_file(path)
        ext = evaluation.external_rankings(cases, sf)
        mixed = evaluation.ensemble_rankings(cases, own_scores, sf, lam)
        by_model[sf.model_name] = ext
        report["ensembles"][sf.model_name] = {"external_mrr": evaluation.mrr(ext), "ensemble_mrr": evaluation.mrr(mixed)}
        lines.append(f"{sf.model_name}\tMRR\t{evaluation.mrr(ext):.4f}")
        lines.append(f"OCoR+{sf.model_name}\tMRR(lambda={lam})\t{evaluation.mrr(mixed):.4f}")

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    _json_dump(report, out_dir / "eval_report.json")
    with (out_dir / "ranks.tsv").open("w", encoding="utf-8") as fh:
        fh.write("case_id\tpositive_rank\treciprocal_rank\n")
        for r in own:
            fh.write(f"{r.case_id}\t{r.positive_rank}\t{1.0 / r.positive_rank:.6f}\n")
    if args.write_scores:
        evaluation.write_score_file(args.write_scores, cases, own_scores)
    if args.perfect_sets:
        sets = evaluation.perfect_ranking_sets(by_model)
        sets["seed"] = seed
        _json_dump(sets, out_dir / "perfect_sets.json")
        lines.append("perfect\t" + "\t".join(f"{k}={v}" for k, v in sets["sizes"].items()))
        for k, v in sets["intersections"].items():
            lines.append(f"perfect\t{k}={v}")
    if not args.no_figures:
        from .plotting import perfect_sets_chart, rank_histogram

        rank_histogram([r.positive_rank for r in own], out_dir / "rank_histogram.png",
                       max(len(c.candidates) for c in cases))
        if args.perfect_sets:
            perfect_sets_chart(sets, out_dir / "perfect_sets.png")
    sys.stdout.write("\n".join(lines) + "\n")
    return 0


def cmd_retrieve(args) -> int:
    params, _ = load_params(args.checkpoint)
    cands = _load_candidates(args.candidates)
    if not cands:
        raise CliError(f"no candidates in {args.candidates}")
    cfg = params.config
    query = corpus.prepare(args.query, corpus.NATURAL_LANGUAGE, cfg.char_len, cfg.max_len_nl)
    seqs = [corpus.prepare(code, corpus.CODE, cfg.char_len, cfg.max_len_code) for _, code in cands]
    scores = evaluation.score_pairs(query, seqs, params)
    order = np.lexsort((np.arange(len(scores)), -scores))[: max(1, args.top_k)]
    for rank, i in enumerate(order, start=1):
        cid, code = cands[i]
        first = code.strip().splitlines()[0] if code.strip() else ""
        sys.stdout.write(f"{rank}\t{cid}\t{scores[i]:.4f}\t{first}\n")
    return 0


def _load_candidates(path: str) -> list[tuple[str, str]]:
    p = Path(path)
    if not p.exists():
        raise CliError(f"candidates file not found: {path}")
    out = []
    with p.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                out.append((str(rec.get("id", lineno)), str(rec["code"])))
            except (json.JSONDecodeError, KeyError, AttributeError) as exc:
                raise CliError(f"{path}:{lineno}: malformed candidate ({exc})") from None
    return out


def cmd_overlap(args) -> int:
    t1 = corpus.tokenize(args.first, args.first_kind)
    t2 = corpus.tokenize(args.second, args.second_kind)
    if not t1 or not t2:
        raise CliError("both inputs must contain at least one token")
    metric = overlap.lcp_overlap if args.metric == "lcp" else None
    matrix = overlap.overlap_matrix(t1, t2, metric)
    sys.stdout.write(overlap.format_matrix_tsv(matrix, t1, t2))
    return 0


def cmd_describe(args) -> int:
    if args.checkpoint:
        params, _ = load_params(args.checkpoint)
    else:
        run = _run_config(args)
        params = init_params(run.model, seed=run.seed)
    sys.stdout.write(describe(params))
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ocor", description="Overlap-aware neural code retrieval.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("preprocess", help="tokenize a corpus and print its statistics")
    p.add_argument("corpus")
    p.add_argument("out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_preprocess)

    def config_flags(p):
        p.add_argument("--config", help="key = value config file (default: $OCOR_CONFIG)")
        p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
        p.add_argument("--seed", type=int)

    p = sub.add_parser("train", help="train a model")
    config_flags(p)
    p.add_argument("--corpus")
    p.add_argument("--dev-corpus", dest="dev_corpus")
    p.add_argument("--dev-cases", dest="dev_cases")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--out")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="MRR of a checkpoint, optionally ensembled with score files")
    p.add_argument("checkpoint")
    p.add_argument("--corpus", required=True)
    p.add_argument("--cases", help="retrieval-case file; built from the corpus when omitted")
    p.add_argument("--negatives", type=int, default=49, help="negatives per built case")
    p.add_argument("--seed", type=int, default=0, help="seed for built cases")
    p.add_argument("--scores", nargs="*", default=[], help="external model score files")
    p.add_argument("--lambda", dest="lam", type=float, default=0.1)
    p.add_argument("--perfect-sets", action="store_true")
    p.add_argument("--write-scores", help="also write this model's scores as a score file")
    p.add_argument("--out", default="ocor_eval")
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("retrieve", help="rank candidate snippets for one query")
    p.add_argument("checkpoint")
    p.add_argument("query")
    p.add_argument("candidates", help="JSON lines with id and code")
    p.add_argument("--top-k", type=int, default=5)
    p.set_defaults(func=cmd_retrieve)

    p = sub.add_parser("overlap", help="print the overlap matrix of two strings as TSV")
    p.add_argument("first")
    p.add_argument("second")
    p.add_argument("--first-kind", choices=corpus.KINDS, default=corpus.NATURAL_LANGUAGE)
    p.add_argument("--second-kind", choices=corpus.KINDS, default=corpus.CODE)
    p.add_argument("--metric", choices=("lcs", "lcp"), default="lcs")
    p.set_defaults(func=cmd_overlap)

    p = sub.add_parser("describe", help="list parameter names, shapes and the total count")
    p.add_argument("checkpoint", nargs="?")
    config_flags(p)
    p.set_defaults(func=cmd_describe)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "eval" and not 0.0 <= args.lam <= 1.0:
        parser.error(f"--lambda must be in [0, 1], got {args.lam}")
    try:
        return args.func(args)
    except (CliError, ConfigError, corpus.CorpusError, CheckpointError, training.TrainingAborted,
            OSError, KeyError, ValueError) as exc:
        print(f"ocor {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
