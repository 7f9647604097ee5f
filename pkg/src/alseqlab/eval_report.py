"""Edit-distance error metrics, correlation analysis, and CSV reports.

Tokens double as words and characters on the synthetic corpora, so the
word- and character-level error rates coincide; report columns carry both
names.  All emitted floats use 6 significant digits.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np


@dataclass(frozen=True)
class ErrorCounts:
    n_ref: int
    subs: int
    dels: int
    ins: int

    def __post_init__(self):
        if min(self.n_ref, self.subs, self.dels, self.ins) < 0:
            raise ValueError("counts must be nonnegative")
        if self.subs + self.dels > self.n_ref:
            raise ValueError("substitutions + deletions cannot exceed reference length")

    def __add__(self, other: "ErrorCounts") -> "ErrorCounts":
        return ErrorCounts(self.n_ref + other.n_ref, self.subs + other.subs,
                           self.dels + other.dels, self.ins + other.ins)


def edit_align(ref: Sequence, hyp: Sequence) -> ErrorCounts:
    """Unit-cost Levenshtein alignment of two token sequences.

    Tie-break during backtrace prefers substitution over insertion over
    deletion, which makes the attribution deterministic.
    """
    R, H = len(ref), len(hyp)
    dist = np.zeros((R + 1, H + 1), dtype=np.int64)
    dist[:, 0] = np.arange(R + 1)
    dist[0, :] = np.arange(H + 1)
    for i in range(1, R + 1):
        for j in range(1, H + 1):
            sub = dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1])
            ins = dist[i, j - 1] + 1
            dele = dist[i - 1, j] + 1
            dist[i, j] = min(sub, ins, dele)

    subs = dels = ins_count = 0
    i, j = R, H
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (ref[i - 1] != hyp[j - 1]):
            if ref[i - 1] != hyp[j - 1]:
                subs += 1
            i -= 1
            j -= 1
        elif j > 0 and dist[i, j] == dist[i, j - 1] + 1:
            ins_count += 1
            j -= 1
        else:
            dels += 1
            i -= 1
    return ErrorCounts(n_ref=R, subs=subs, dels=dels, ins=ins_count)


def error_rate(counts: ErrorCounts) -> float:
    """(S + D + I) / N; can exceed 1 through insertions."""
    if counts.n_ref < 1:
        raise ValueError("error rate undefined for empty reference")
    return (counts.subs + counts.dels + counts.ins) / counts.n_ref


def corr_rate(counts: ErrorCounts) -> float:
    """Correct rate (N - S - D) / N, in [0, 1]."""
    if counts.n_ref < 1:
        raise ValueError("correct rate undefined for empty reference")
    return (counts.n_ref - counts.subs - counts.dels) / counts.n_ref


def aggregate_counts(pairs: Sequence[tuple[Sequence, Sequence]]) -> ErrorCounts:
    """Pooled counts over (reference, hypothesis) pairs (micro average)."""
    total = ErrorCounts(0, 0, 0, 0)
    for ref, hyp in pairs:
        total = total + edit_align(ref, hyp)
    return total


def pearson(xs: Sequence[float], ys: Sequence[float]) -> float:
    """Sample Pearson correlation; undefined for constant inputs."""
    x = np.asarray(xs, dtype=np.float64)
    y = np.asarray(ys, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1 or x.size < 2:
        raise ValueError("pearson needs two equal-length sequences of >= 2 points")
    xc = x - x.mean()
    yc = y - y.mean()
    sx = np.sqrt((xc * xc).sum())
    sy = np.sqrt((yc * yc).sum())
    if sx == 0.0 or sy == 0.0:
        raise ValueError("pearson undefined for zero-variance input")
    return float((xc * yc).sum() / (sx * sy))


# ---------------------------------------------------------------------------
# Report emission
# ---------------------------------------------------------------------------

def fmt(x) -> str:
    """6 significant digits for floats; everything else verbatim."""
    if isinstance(x, float):
        return format(x, ".6g")
    return str(x)


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for r in rows:
            writer.writerow([fmt(v) for v in r])


SUMMARY_COLUMNS = ["seed", "strategy", "iteration", "labeled_frac",
                   "wer", "cer", "corr_rate", "corr_rank_loss", "corr_rank_cer"]


def summary_rows(results) -> list[list]:
    rows = []
    for res in results:
        for rec in res.records:
            rows.append([res.seed, res.strategy, rec.iteration, rec.labeled_frac,
                         rec.test_error_rate, rec.test_error_rate, rec.test_corr_rate,
                         _opt(rec.corr_rank_loss), _opt(rec.corr_rank_cer)])
    return rows


def _opt(x):
    return "" if x is None else x


def emit_report(results, out_dir, scatter_iteration: int = 2) -> list[Path]:
    """Write summary, per-strategy learning curves, and scatter CSVs.

    ``results`` are experiment results (one per seed x strategy) carrying
    ``records`` and per-iteration ``pool_tables``.  Returns written paths.
    """
    results = list(results)
    if not results:
        raise ValueError("no experiment results to report")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    path = out / "summary.csv"
    _write_csv(path, SUMMARY_COLUMNS, summary_rows(results))
    written.append(path)

    strategies = sorted({res.strategy for res in results})
    for strat in strategies:
        sub = [r for r in results if r.strategy == strat]
        iters = sorted({rec.iteration for r in sub for rec in r.records})
        rows = []
        for it in iters:
            recs = [rec for r in sub for rec in r.records if rec.iteration == it]
            errs = np.array([rec.test_error_rate for rec in recs])
            corrs = np.array([rec.test_corr_rate for rec in recs])
            rows.append([it, recs[0].labeled_frac,
                         float(errs.mean()), float(errs.std()),
                         float(corrs.mean()), float(corrs.std()), len(recs)])
        path = out / f"learning_curve_{strat}.csv"
        _write_csv(path, ["iteration", "labeled_frac", "mean_error_rate",
                          "std_error_rate", "mean_corr_rate", "std_corr_rate",
                          "n_seeds"], rows)
        written.append(path)

    cer_rows, loss_rows = [], []
    for res in results:
        table = res.pool_tables.get(scatter_iteration, [])
        for row in table:
            base = [res.seed, res.strategy, scatter_iteration, row["utt_id"],
                    row["score"]]
            cer_rows.append(base + [row["token_error_rate"]])
            loss_rows.append(base + [row["true_norm_loss"]])
    head = ["seed", "strategy", "iteration", "utt_id", "score"]
    path = out / "rank_vs_cer.csv"
    _write_csv(path, head + ["token_error_rate"], cer_rows)
    written.append(path)
    path = out / "rank_vs_trueloss.csv"
    _write_csv(path, head + ["true_norm_loss"], loss_rows)
    written.append(path)
    return written
