"""Command-line interface.

Subcommands: fixture, calibrate, score, benchmark, trials, agreement,
rank, report. Exit codes: 0 success, 1 usage error, 2 data error,
3 backend error.

Backends: `--backend mock` (default) needs `--seed` and latent sidecars —
given via `--latents` or found next to the corpus file; `--backend remote`
reads CSEVAL_API_BASE / CSEVAL_API_KEY / CSEVAL_MODEL from the
environment. `--cache DIR` makes reruns byte-identical without new
backend calls. `--config FILE` supplies defaults from a JSON object;
explicit flags win. Run statistics go to stderr so report files stay
deterministic.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import __version__, reports
from .calibrate import CalibrationConfig, CalibrationError, CalibrationRun, calibrate
from .corpus import (
    DIMENSIONS,
    Corpus,
    CorpusError,
    dimension,
    latents_path,
    load_corpus,
    synth_fixture,
    write_corpus,
    write_latents,
)
from .prompts import PromptError
from .provider import (
    CompletionClient,
    MockBackend,
    MockOracleState,
    ProviderError,
    RemoteBackend,
    ResponseCache,
)
from .scorer import (
    EvaluatorSpec,
    ScoringError,
    human_unified,
    lexical_scores,
    load_external_scores,
    read_score_tree,
    score_corpus_llm,
    unified_from_table,
    unified_rank,
    write_score_tree,
)
from .stats import StatsError, TrialSpec, corpus_agreement, trial_protocol

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_BACKEND = 3


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags; route through UsageError so usage
    # problems exit 1 and 2 stays reserved for data errors.
    def error(self, message: str):
        raise UsageError(f"{message}\n{self.format_usage().rstrip()}")


def _add_backend_opts(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backend", choices=("mock", "remote"), default="mock",
                   help="completion backend (default: mock)")
    p.add_argument("--latents", action="append", default=[], metavar="PATH",
                   help="latent sidecar for the mock; repeatable "
                        "(default: sidecar next to the corpus)")
    p.add_argument("--model", default=None, help="model id sent to the backend")
    p.add_argument("--cache", default=None, metavar="DIR",
                   help="persistent response cache directory")
    p.add_argument("--seed", type=int, default=None,
                   help="top-level seed (required with the mock backend)")


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read config file: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"config file is not valid JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise DataError("config file must hold a JSON object")
    return obj


def _resolve_seed(args) -> int:
    if args.seed is None:
        if args.backend == "mock":
            raise UsageError("--seed is required with the mock backend")
        return 0
    return args.seed


def _build_client(args, corpus_paths: list[str]) -> tuple[CompletionClient, str]:
    """(client, model_id) from backend options."""
    cache = ResponseCache(args.cache) if args.cache else None
    if args.backend == "mock":
        paths = list(args.latents)
        if not paths:
            paths = [latents_path(p) for p in corpus_paths if latents_path(p).is_file()]
        if not paths:
            raise DataError(
                "mock backend needs latent sidecars; pass --latents or keep the "
                "corpus .latent file next to the corpus"
            )
        try:
            state = MockOracleState.from_latents_files(paths)
        except OSError as exc:
            raise DataError(f"cannot read latent sidecar: {exc}") from exc
        backend = MockBackend(state)
        model_id = args.model or "mock"
    else:
        backend = RemoteBackend(model_id=args.model)
        model_id = args.model or backend.model_id or "remote"
    return CompletionClient(backend, cache=cache), model_id


def _load_corpus(path: str) -> Corpus:
    try:
        return load_corpus(path)
    except OSError as exc:
        raise DataError(f"cannot read corpus: {exc}") from exc


def _check_disjoint(dev: Corpus, test: Corpus) -> None:
    overlap = set(dev.ids()) & set(test.ids())
    if overlap:
        raise DataError(
            f"dev and test corpora share {len(overlap)} sample id(s), "
            f"e.g. {sorted(overlap)[:3]}"
        )


def _refuse_overwrite(path: Path, force: bool) -> None:
    if path.exists() and not force:
        raise DataError(f"{path} already exists; pass --force to overwrite")


def _parse_aspects(value: str):
    if value == "all":
        return list(DIMENSIONS)
    return [dimension(key.strip()) for key in value.split(",") if key.strip()]


def _stats_line(client: CompletionClient) -> str:
    return f"backend_calls={client.backend_calls} cache_hits={client.cache_hits}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_fixture(args) -> int:
    out = Path(args.out)
    side = latents_path(out)
    _refuse_overwrite(out, args.force)
    _refuse_overwrite(side, args.force)
    corpus, latents = synth_fixture(
        args.groups, args.models, args.seed,
        annotators=args.annotators, annotator_noise=args.annotator_noise,
    )
    out.parent.mkdir(parents=True, exist_ok=True)
    write_corpus(corpus, out)
    write_latents(latents, side)
    print(
        f"wrote {len(corpus)} samples in {len(corpus.group_index)} groups "
        f"to {out} (latents: {side})",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_calibrate(args) -> int:
    config = _load_config_file(args.config)
    seed = _resolve_seed(args)
    dev = _load_corpus(args.dev)
    client, model_id = _build_client(args, [args.dev])
    aspects = _parse_aspects(args.aspect)
    overrides = {
        key: value
        for key, value in (
            ("fewshot_sizes", args.fewshot), ("mc_trials", args.trials),
            ("pool_size", args.pool_size), ("refine_rounds", args.rounds),
            ("eval_subset_size", args.subset),
        )
        if value is not None
    }
    for aspect in aspects:
        record = dict(config.get("calibration", config))
        record.pop("aspect", None)
        record.pop("seed", None)
        record.update(overrides)
        record.setdefault("model_id", model_id)
        known = {f.name for f in dataclasses.fields(CalibrationConfig)}
        cfg = CalibrationConfig(
            aspect=aspect, **{k: v for k, v in record.items() if k in known}
        )
        run = calibrate(cfg, dev, client, seed)
        run_dir = Path(args.out) / aspect.key
        run.save(run_dir)
        print(
            f"{aspect.key}: final={run.final.id} dev_corr="
            f"{run.final.dev_corr:.4f} pool={len(run.pool)} -> {run_dir}",
            file=sys.stderr,
        )
    print(_stats_line(client), file=sys.stderr)
    return EXIT_OK


def cmd_score(args) -> int:
    corpus = _load_corpus(args.corpus)
    spec = EvaluatorSpec.from_string(args.evaluator)
    evaluator_id = args.id or spec.evaluator_id
    aspects = _parse_aspects(args.aspects)
    if spec.kind == "lexical":
        values = lexical_scores(corpus, spec.metric_id)
        table = {a.key: dict(values) for a in aspects}
    elif spec.kind == "external":
        table = load_external_scores(spec)
        missing = [s.id for s in corpus if s.id not in next(iter(table.values()))]
        if missing:
            logger.warning("external scores missing %d corpus ids", len(missing))
    else:
        seed = _resolve_seed(args)
        client, model_id = _build_client(args, [args.corpus])
        table = score_corpus_llm(
            spec, corpus, aspects, client, seed,
            temperature=args.temperature, model_id=model_id,
            failure_threshold=args.failure_threshold,
        )
        print(_stats_line(client), file=sys.stderr)
    written = write_score_tree(table, args.out, evaluator_id)
    print(
        f"{evaluator_id}: wrote {len(written)} score file(s) under "
        f"{Path(args.out) / evaluator_id}",
        file=sys.stderr,
    )
    return EXIT_OK


def cmd_benchmark(args) -> int:
    corpus = _load_corpus(args.corpus)
    tables = read_score_tree(args.scores)
    ours = args.ours
    if ours is None:
        cot_rows = [e for e in tables if e.startswith("cot-")]
        if len(cot_rows) == 1:
            ours = cot_rows[0]
    elif ours not in tables:
        raise DataError(f"--ours {ours!r} has no score files under {args.scores}")
    cfg_hash = reports.config_hash(
        {"command": "benchmark", "corpus": args.corpus, "scores": args.scores,
         "ours": ours, "evaluators": sorted(tables)}
    )
    sidecar = reports.benchmark_sidecar(corpus, tables, ours, cfg_hash)
    text = reports.write_report(sidecar, args.out)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_trials(args) -> int:
    corpus = _load_corpus(args.corpus)
    tables = read_score_tree(args.scores)
    spec = TrialSpec(
        sample_sizes=tuple(int(s) for s in args.sizes.split(",")) if args.sizes else None,
        seeds=tuple(int(s) for s in args.seeds.split(",")),
    )
    aggregates = trial_protocol(corpus, tables, spec)
    sizes = spec.sizes_for(len(corpus))
    cfg_hash = reports.config_hash(
        {"command": "trials", "corpus": args.corpus, "scores": args.scores,
         "sizes": list(sizes), "seeds": list(spec.seeds)}
    )
    text = reports.write_report(
        reports.trials_sidecar(aggregates, sizes, spec.seeds, cfg_hash), args.out
    )
    dump_path = Path(args.out).with_name(Path(args.out).name + ".pertrial.tsv")
    reports.write_report(reports.pertrial_sidecar(aggregates, cfg_hash), dump_path)
    sys.stdout.write(text)
    print(f"per-trial dump: {dump_path}", file=sys.stderr)
    return EXIT_OK


def cmd_agreement(args) -> int:
    corpus = _load_corpus(args.corpus)
    alphas = corpus_agreement(corpus)
    cfg_hash = reports.config_hash({"command": "agreement", "corpus": args.corpus})
    sidecar = reports.agreement_sidecar(alphas, len(corpus), cfg_hash)
    if args.out:
        text = reports.write_report(sidecar, args.out)
    else:
        text = reports.render_report(sidecar)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_rank(args) -> int:
    corpus = _load_corpus(args.corpus)
    tables = read_score_tree(args.scores)
    gold = human_unified(corpus)
    rows: list[tuple[str, float, int]] = []
    for evaluator_id in sorted(tables):
        # lexical overlap scores live on [0,1], not on the judgment
        # scales, so the unified combination rejects them; skip those rows
        try:
            predicted = unified_from_table(tables[evaluator_id])
        except (ScoringError, StatsError) as exc:
            logger.warning("rank: skipping %s (%s)", evaluator_id, exc)
            continue
        value, groups = unified_rank(corpus, predicted, gold)
        rows.append((evaluator_id, value, groups))
    if not rows:
        raise DataError("no evaluator had scores for all four dimensions")
    cfg_hash = reports.config_hash(
        {"command": "rank", "corpus": args.corpus, "scores": args.scores,
         "evaluators": [r[0] for r in rows]}
    )
    text = reports.write_report(reports.rank_sidecar(rows, cfg_hash), args.out)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        sidecar = json.loads(Path(args.input).read_text(encoding="utf-8"))
    except OSError as exc:
        raise DataError(f"cannot read sidecar: {exc}") from exc
    except ValueError as exc:
        raise DataError(f"sidecar is not valid JSON: {exc}") from exc
    if not isinstance(sidecar, dict) or "columns" not in sidecar:
        raise DataError("not a report sidecar (missing columns)")
    text = reports.render_report(sidecar)
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="cseval", description=__doc__.split("\n\n")[0])
    parser.add_argument("--version", action="version", version=f"cseval {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("fixture", help="generate a synthetic corpus with latent truth")
    p.add_argument("--out", required=True, help="corpus output path (.jsonl)")
    p.add_argument("--groups", type=int, required=True)
    p.add_argument("--models", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--annotators", type=int, default=0)
    p.add_argument("--annotator-noise", type=float, default=0.0)
    p.add_argument("--force", action="store_true", help="overwrite existing outputs")
    p.set_defaults(func=cmd_fixture)

    p = sub.add_parser("calibrate", help="search for a scoring rubric per dimension")
    p.add_argument("--dev", required=True, help="dev corpus (.jsonl)")
    p.add_argument("--aspect", default="all",
                   help="dimension key, comma list, or 'all'")
    p.add_argument("--out", required=True, help="output directory for run dirs")
    p.add_argument("--config", default=None, help="JSON config file")
    p.add_argument("--fewshot", default=None,
                   type=lambda s: tuple(int(x) for x in s.split(",")),
                   help="few-shot sizes, e.g. 2,4,8")
    p.add_argument("--trials", type=int, default=None, help="drafts per few-shot size")
    p.add_argument("--pool-size", type=int, default=None, help="top-k survivors")
    p.add_argument("--rounds", type=int, default=None, help="refinement rounds")
    p.add_argument("--subset", type=int, default=None, help="screening subset size")
    _add_backend_opts(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("score", help="score a corpus with one evaluator")
    p.add_argument("--corpus", required=True)
    p.add_argument("--evaluator", required=True,
                   help="lexical:<metric> | zero-shot | cot:<dir> | external:<dir>")
    p.add_argument("--out", required=True, help="score tree root directory")
    p.add_argument("--aspects", default="all")
    p.add_argument("--id", default=None, help="override the evaluator id")
    p.add_argument("--temperature", type=float, default=0.0)
    p.add_argument("--failure-threshold", type=float, default=0.2)
    _add_backend_opts(p)
    p.set_defaults(func=cmd_score)

    p = sub.add_parser("benchmark", help="correlation table for a score tree")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", required=True, help="score tree root")
    p.add_argument("--out", required=True, help="report path")
    p.add_argument("--ours", default=None,
                   help="evaluator id for the delta row (default: the sole cot-*)")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("trials", help="correlation stability over subsample trials")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--sizes", default=None, help="comma list (default: 100,600,...)")
    p.add_argument("--seeds", default="1,2,3")
    p.set_defaults(func=cmd_trials)

    p = sub.add_parser("agreement", help="inter-annotator agreement (alpha)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_agreement)

    p = sub.add_parser("rank", help="system-ranking fidelity (NDCG)")
    p.add_argument("--corpus", required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rank)

    p = sub.add_parser("report", help="re-render a report from its JSON sidecar")
    p.add_argument("--input", required=True, help="report sidecar (.json)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.verbose:
            logging.basicConfig(level=logging.INFO, stream=sys.stderr)
        if not getattr(args, "command", None):
            raise UsageError(parser.format_usage().rstrip())
        return args.func(args)
    except UsageError as exc:
        print(f"cseval: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (CorpusError, StatsError, ScoringError, PromptError, CalibrationError,
            DataError) as exc:
        print(f"cseval: error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ProviderError as exc:
        print(f"cseval: backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND


if __name__ == "__main__":
    sys.exit(main())
