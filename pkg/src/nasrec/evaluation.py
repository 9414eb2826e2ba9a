"""Top-N ranking evaluation: recall@N and NDCG@N over repeated seeded runs.

Any model object with ``score_items(user, items, seed) -> scores`` plugs in;
candidate sets are the full item universe minus each user's train-partition
positives. Users without relevant labeled items are skipped and counted.
Metric averages use compensated summation so results are order-stable.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import stats

from .data import RelevanceLabels
from .errors import ConfigError, EvalError


@dataclass
class EvalReport:
    top_n: int
    runs: int
    seeds: list[int]
    recall_runs: list[float]
    ndcg_runs: list[float]
    recall_mean: float
    recall_std: float
    ndcg_mean: float
    ndcg_std: float
    evaluated_users: int
    skipped_users: int


def rank_items(model, user: int, candidates: np.ndarray, seed: int = 0) -> np.ndarray:
    """Candidates ordered by descending score, ties broken by ascending id."""
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(candidates) == 0:
        return candidates
    scores = np.asarray(model.score_items(user, candidates, seed), dtype=np.float64)
    order = np.lexsort((candidates, -scores))
    return candidates[order]


def recall_at_n(ranked: np.ndarray, relevant: set[int], n: int) -> float:
    """|top-N intersect relevant| / |relevant|; relevant must be nonempty."""
    if not relevant:
        raise EvalError("recall undefined for a user with no relevant items")
    hits = sum(1 for item in ranked[:n] if int(item) in relevant)
    return hits / len(relevant)


def dcg_at_n(relevance_bits, n: int) -> float:
    """Discounted cumulative gain sum((2^rel - 1) / log2(rank + 1)) over the top N."""
    gains = [(2.0 ** float(rel) - 1.0) / math.log2(rank + 1)
             for rank, rel in enumerate(relevance_bits[:n], start=1)]
    return math.fsum(gains)


def ndcg_at_n(relevance_bits, num_relevant: int, n: int) -> float:
    """DCG over the ideal DCG that fills the top min(num_relevant, n) slots."""
    if num_relevant < 1:
        raise EvalError("NDCG undefined for a user with no relevant items")
    ideal = dcg_at_n([1] * min(num_relevant, n), n)
    return dcg_at_n(relevance_bits, n) / ideal


def evaluate(model, labels: RelevanceLabels, train_positives: dict[int, set[int]],
             num_items: int, top_n: int = 10, runs: int = 5,
             seeds: list[int] | None = None) -> EvalReport:
    """Per-user metrics averaged over evaluable users, aggregated over runs.

    The run seed drives any sampling inside the model (e.g. friend
    subsampling at inference); a deterministic model yields zero stddev.
    """
    if runs < 1:
        raise ConfigError("runs must be >= 1")
    if seeds is None:
        seeds = list(range(runs))
    if len(seeds) != runs:
        raise ConfigError(f"got {len(seeds)} seeds for {runs} runs")

    users = sorted(labels.relevant)
    evaluable: list[tuple[int, set[int], np.ndarray]] = []
    skipped = 0
    all_items = np.arange(num_items, dtype=np.int64)
    for user in users:
        relevant = labels.relevant[user]
        if not relevant:
            skipped += 1
            continue
        excluded = train_positives.get(user, set())
        if excluded:
            mask = np.ones(num_items, dtype=bool)
            mask[list(excluded)] = False
            candidates = all_items[mask]
        else:
            candidates = all_items
        evaluable.append((user, relevant, candidates))
    if not evaluable:
        raise EvalError("no evaluable users (every user lacks relevant labeled items)")

    recall_runs: list[float] = []
    ndcg_runs: list[float] = []
    for seed in seeds:
        recalls: list[float] = []
        ndcgs: list[float] = []
        for user, relevant, candidates in evaluable:
            ranked = rank_items(model, user, candidates, seed)
            bits = [1 if int(item) in relevant else 0 for item in ranked[:top_n]]
            recalls.append(recall_at_n(ranked, relevant, top_n))
            ndcgs.append(ndcg_at_n(bits, len(relevant), top_n))
        recall_runs.append(math.fsum(recalls) / len(recalls))
        ndcg_runs.append(math.fsum(ndcgs) / len(ndcgs))

    def spread(values: list[float]) -> float:
        if len(values) < 2:
            return 0.0
        mean = math.fsum(values) / len(values)
        return math.sqrt(math.fsum((v - mean) ** 2 for v in values) / (len(values) - 1))

    return EvalReport(
        top_n=top_n, runs=runs, seeds=list(seeds),
        recall_runs=recall_runs, ndcg_runs=ndcg_runs,
        recall_mean=math.fsum(recall_runs) / runs, recall_std=spread(recall_runs),
        ndcg_mean=math.fsum(ndcg_runs) / runs, ndcg_std=spread(ndcg_runs),
        evaluated_users=len(evaluable), skipped_users=skipped,
    )


def paired_ttest(a: list[float], b: list[float]) -> tuple[float, float]:
    """Paired t statistic and two-sided p-value for per-run metric pairs."""
    if len(a) != len(b) or len(a) < 2:
        raise ConfigError("paired t-test needs two equal-length samples of size >= 2")
    result = stats.ttest_rel(a, b)
    return float(result.statistic), float(result.pvalue)


def write_report_csv(path: str | Path, report: EvalReport, model_tag: str,
                     train_frac: float | None) -> None:
    """Report CSV: one row per run plus a trailing mean row."""
    frac = "" if train_frac is None else f"{train_frac:g}"
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["model", "train_frac", "run", "seed",
                         f"recall@{report.top_n}", f"ndcg@{report.top_n}"])
        for run, (seed, rec, ndcg) in enumerate(
                zip(report.seeds, report.recall_runs, report.ndcg_runs), start=1):
            writer.writerow([model_tag, frac, run, seed, f"{rec:.6f}", f"{ndcg:.6f}"])
        writer.writerow([model_tag, frac, "mean", "",
                         f"{report.recall_mean:.6f}", f"{report.ndcg_mean:.6f}"])


def write_report_json(path: str | Path, report: EvalReport, model_tag: str,
                      train_frac: float | None) -> None:
    payload = {"model": model_tag, "train_frac": train_frac, **asdict(report)}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n",
                          encoding="utf-8")
