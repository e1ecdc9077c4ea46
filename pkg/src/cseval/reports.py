"""Delimited-text reports with machine-readable JSON sidecars.

Every reporting command writes a tab-separated table with a `#` provenance
header (package version, config hash, and the exact tokenizer/smoothing
conventions behind the numbers, since lexical scores are only comparable
under identical conventions). The same content is written to a `.json`
sidecar holding unformatted values; `render_report` rebuilds the text from
a sidecar byte-for-byte, which is all the `report` subcommand does.

Nothing here embeds timestamps or absolute paths, so identical inputs
produce identical bytes.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__
from .corpus import DIMENSIONS, Corpus
from .stats import (
    StatsError,
    TrialAggregate,
    build_groups,
    sample_level_corr,
)

_CONVENTIONS = (
    "tokenizer=lowercase+punctuation-split; "
    "bleu=clipped-ngrams,closest-ref-BP,add-one-on-zero-matches(n>=2); "
    "rouge=F1,multi-ref-max; meteor=exact+suffix-stem,alpha=0.9,beta=3,gamma=0.5"
)
_CORR_CONVENTIONS = (
    "correlation=mean per hate-speech group; rho=spearman(fractional ranks), "
    "tau=kendall-tau-b; avg=mean of the four dimension correlations"
)
_AGG_CONVENTION = (
    "aggressiveness=matched orientation (raw scales both sides); "
    "one-side-flipped values are the negations, see sidecar"
)

_COLUMN_ORDER = [d.key for d in DIMENSIONS]


def config_hash(config: dict) -> str:
    """Short stable digest of a resolved command configuration."""
    payload = json.dumps(config, sort_keys=True, ensure_ascii=False, default=str)
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:12]


def _format_cell(value) -> str:
    if value is None:
        return "n/a"
    if isinstance(value, bool):
        return str(value)
    if isinstance(value, float):
        return f"{value:.3f}"
    return str(value)


def render_report(sidecar: dict) -> str:
    """Rebuild the delimited text exactly as the writing command emitted it."""
    lines = [f"# {line}" for line in sidecar["header"]]
    lines.append("\t".join(sidecar["columns"]))
    for row in sidecar["rows"]:
        lines.append("\t".join(_format_cell(cell) for cell in row))
    return "\n".join(lines) + "\n"


def write_report(sidecar: dict, out_path: str | Path) -> str:
    """Write text + sidecar; returns the rendered text."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    text = render_report(sidecar)
    out_path.write_text(text, encoding="utf-8")
    sidecar_path = out_path.with_name(out_path.name + ".json")
    sidecar_path.write_text(
        json.dumps(sidecar, ensure_ascii=False, sort_keys=True, indent=1) + "\n",
        encoding="utf-8",
    )
    return text


def _base_header(kind: str, cfg_hash: str, extra: list[str]) -> list[str]:
    return [f"cseval {kind} v{__version__}", f"config_hash={cfg_hash}", *extra]


# ---------------------------------------------------------------------------
# benchmark
# ---------------------------------------------------------------------------


def benchmark_sidecar(
    corpus: Corpus,
    tables: dict[str, dict[str, dict[str, float]]],
    ours: str | None,
    cfg_hash: str,
) -> dict:
    """Correlation table: one row per evaluator, rho/tau per dimension.

    `tables` maps evaluator id -> dimension key -> sample id -> score.
    When `ours` names a row, a delta row (ours minus the best other row,
    per column) is appended.
    """
    columns = ["evaluator"]
    for key in _COLUMN_ORDER:
        columns += [f"{key}_rho", f"{key}_tau"]
    columns += ["avg_rho", "avg_tau", "skipped"]

    rows: list[list] = []
    flipped: dict[str, dict[str, float | None]] = {}
    for evaluator_id in sorted(tables):
        per_dim = tables[evaluator_id]
        cells: list = [evaluator_id]
        rhos: list[float | None] = []
        taus: list[float | None] = []
        total_skipped = 0
        flipped[evaluator_id] = {}
        for dim in DIMENSIONS:
            scores = per_dim.get(dim.key)
            rho = tau = None
            if scores:
                groups = build_groups(corpus, scores, dim)
                try:
                    rho, skipped_r = sample_level_corr(groups, "spearman")
                    total_skipped += skipped_r
                except StatsError:
                    rho = None
                try:
                    tau, _ = sample_level_corr(groups, "kendall")
                except StatsError:
                    tau = None
            cells += [rho, tau]
            rhos.append(rho)
            taus.append(tau)
            if not dim.higher_better:
                flipped[evaluator_id][dim.key + "_rho"] = None if rho is None else -rho
                flipped[evaluator_id][dim.key + "_tau"] = None if tau is None else -tau
        avg_rho = None if any(v is None for v in rhos) else sum(rhos) / len(rhos)
        avg_tau = None if any(v is None for v in taus) else sum(taus) / len(taus)
        cells += [avg_rho, avg_tau, total_skipped]
        rows.append(cells)

    if ours is not None and any(r[0] == ours for r in rows) and len(rows) > 1:
        ours_row = next(r for r in rows if r[0] == ours)
        delta: list = [f"delta({ours}-best)"]
        for i in range(1, len(columns) - 1):
            others = [r[i] for r in rows if r[0] != ours and r[i] is not None]
            if not others or ours_row[i] is None:
                delta.append(None)
            else:
                delta.append(ours_row[i] - max(others))
        delta.append("")
        rows.append(delta)

    header = _base_header(
        "benchmark",
        cfg_hash,
        [
            f"samples={len(corpus)} groups={len(corpus.group_index)}",
            _CONVENTIONS,
            _CORR_CONVENTIONS,
            _AGG_CONVENTION,
            "scores are not comparable across differing tokenizer or smoothing settings",
        ],
    )
    return {
        "kind": "benchmark",
        "header": header,
        "columns": columns,
        "rows": rows,
        "ours": ours,
        "aggressiveness_flipped": flipped,
    }


# ---------------------------------------------------------------------------
# trials
# ---------------------------------------------------------------------------


def trials_sidecar(
    aggregates: list[TrialAggregate], sizes: tuple[int, ...], seeds: tuple[int, ...],
    cfg_hash: str,
) -> dict:
    columns = ["evaluator", "dimension", "mean_rho", "std_rho", "defined", "trials"]
    rows = [
        [a.evaluator_id, a.dimension, a.mean, a.std, a.defined, len(a.trials)]
        for a in aggregates
    ]
    header = _base_header(
        "trials",
        cfg_hash,
        [
            f"sizes={','.join(str(s) for s in sizes)} seeds={','.join(str(s) for s in seeds)}",
            "per-trial subsample: n samples without replacement, random state = trial seed",
            "std over defined trials (ddof=1)",
            _CORR_CONVENTIONS,
        ],
    )
    return {"kind": "trials", "header": header, "columns": columns, "rows": rows}


def pertrial_sidecar(aggregates: list[TrialAggregate], cfg_hash: str) -> dict:
    columns = ["evaluator", "dimension", "size", "seed", "rho", "skipped_groups"]
    rows = [
        [a.evaluator_id, a.dimension, t.size, t.seed, t.value, t.skipped_groups]
        for a in aggregates
        for t in a.trials
    ]
    header = _base_header("trials-pertrial", cfg_hash, [])
    return {"kind": "trials-pertrial", "header": header, "columns": columns, "rows": rows}


# ---------------------------------------------------------------------------
# agreement and ranking
# ---------------------------------------------------------------------------


def agreement_sidecar(alphas: dict[str, float], n_items: int, cfg_hash: str) -> dict:
    columns = ["dimension", "alpha"]
    rows = [[key, alphas[key]] for key in [d.key for d in DIMENSIONS] + ["average"]]
    header = _base_header(
        "agreement",
        cfg_hash,
        [f"items={n_items}", "krippendorff alpha, interval distance (a-b)^2"],
    )
    return {"kind": "agreement", "header": header, "columns": columns, "rows": rows}


def rank_sidecar(rows: list[tuple[str, float, int]], cfg_hash: str) -> dict:
    columns = ["evaluator", "ndcg", "groups"]
    header = _base_header(
        "rank",
        cfg_hash,
        [
            "per-group NDCG of predicted system order vs human order, averaged",
            "gold relevance = group size minus human rank position; log2 discount",
            "predicted order from per-sample unified scores (all four dimensions)",
        ],
    )
    return {
        "kind": "rank",
        "header": header,
        "columns": columns,
        "rows": [list(r) for r in rows],
    }
