"""Pareto fronts over (group-data requirement, worst-group error) and the summary table."""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass

import numpy as np

from .regimes import AvailabilityRegime


@dataclass(frozen=True)
class ParetoPoint:
    method_id: str
    rank: int
    y: float

    def __post_init__(self):
        if not np.isfinite(self.y) or self.y < 0:
            raise ValueError(f"{self.method_id}: y must be finite and >= 0")


def dominates(p: ParetoPoint, q: ParetoPoint) -> bool:
    return p.rank <= q.rank and p.y <= q.y and (p.rank < q.rank or p.y < q.y)


def pareto_front(points) -> list[ParetoPoint]:
    """Non-dominated points sorted by rank, then y. Exact duplicates are all kept."""
    pts = list(points)
    if not pts:
        return []
    order = sorted(range(len(pts)), key=lambda k: (pts[k].rank, pts[k].y, k))
    front = []
    best_lower = np.inf  # lowest y among strictly smaller ranks
    i = 0
    while i < len(order):
        rank = pts[order[i]].rank
        j = i
        while j < len(order) and pts[order[j]].rank == rank:
            j += 1
        block = [pts[k] for k in order[i:j]]
        low = block[0].y
        if low < best_lower:
            front.extend(p for p in block if p.y == low)
        best_lower = min(best_lower, low)
        i = j
    return front


def _point(r, metric: str) -> ParetoPoint:
    if isinstance(r, ParetoPoint):
        return r
    return ParetoPoint(r.method_id, int(r.regime), r.mean(f"worst_group.{metric}"))


def summarize(results_by_dataset: dict, metric: str = "ecce_mean") -> dict:
    """Count, per regime, the datasets where its best method is Pareto optimal.

    ``results_by_dataset`` maps a dataset name to :class:`MethodResult` objects
    or :class:`ParetoPoint` objects. Methods flagged ``frontier=False`` are
    ignored. Within a regime the lowest mean worst-group error wins, ties to
    the lowest method id; the modal winner across optimal datasets is
    reported as ``method (wins/optimal)``, ties again to the lowest id.
    """
    if not results_by_dataset:
        return {"metric": metric, "rows": [], "datasets": {}}
    per_dataset = {}
    methods_seen = {r: set() for r in AvailabilityRegime}
    for name, results in results_by_dataset.items():
        points = [_point(r, metric) for r in results if getattr(r, "frontier", True)]
        front = pareto_front(points)
        on_front = {(p.method_id, p.rank, p.y) for p in front}
        best = {}
        for p in points:
            methods_seen[AvailabilityRegime(p.rank)].add(p.method_id)
            cur = best.get(p.rank)
            if cur is None or (p.y, p.method_id) < (cur.y, cur.method_id):
                best[p.rank] = p
        per_dataset[name] = {
            AvailabilityRegime(rank).label: {
                "method": p.method_id, "y": p.y, "optimal": (p.method_id, p.rank, p.y) in on_front}
            for rank, p in sorted(best.items())
        }
    rows = []
    for regime in sorted(AvailabilityRegime, reverse=True):
        winners = [d[regime.label]["method"] for d in per_dataset.values()
                   if regime.label in d and d[regime.label]["optimal"]]
        n_opt = len(winners)
        if n_opt:
            counts = Counter(winners)
            top = max(counts.values())
            leaders = sorted(m for m, c in counts.items() if c == top)
            method, wins, tie = leaders[0], top, leaders[1:]
        else:
            method, wins, tie = "n/a", 0, []
        text = f"{regime.label} | {n_opt} | {method} ({wins}/{n_opt})"
        if tie:
            text += f" [tied with {', '.join(tie)}]"
        rows.append({
            "regime": regime.label, "rank": int(regime), "methods_tested": len(methods_seen[regime]),
            "times_optimal": n_opt, "method": method, "wins": wins, "tied_with": tie, "text": text,
        })
    return {"metric": metric, "rows": rows, "datasets": per_dataset}
