"""Receptive-field coverage accounting and the coverage-greedy sampler.

The coverage of a node set is the fraction of a universe of nodes that
falls inside at least one member's L-hop receptive field. Since balls
overlap, coverage of a set is a union, not a sum — the whole point of
sampling for coverage is to avoid paying twice for the same region.

The sampler draws candidates sequentially without replacement, each draw
weighted by the candidate's singleton coverage.
"""
from __future__ import annotations

import numpy as np

from .graph import Graph, bfs_ball


def _universe_mask(g: Graph, universe: np.ndarray | None) -> np.ndarray:
    if universe is None:
        return np.ones(g.num_nodes, dtype=bool)
    universe = np.asarray(universe, dtype=np.int64)
    if universe.size == 0:
        raise ValueError("coverage universe is empty")
    if universe.min() < 0 or universe.max() >= g.num_nodes:
        raise ValueError("universe node id out of range")
    mask = np.zeros(g.num_nodes, dtype=bool)
    mask[universe] = True
    return mask


def coverage_ratio(g: Graph, nodes: np.ndarray, hops: int, universe: np.ndarray | None = None) -> float:
    """Fraction of the universe inside the joint receptive field of `nodes`."""
    mask = _universe_mask(g, universe)
    total = int(mask.sum())
    nodes = np.asarray(nodes, dtype=np.int64)
    if nodes.size == 0:
        return 0.0
    ball = bfs_ball(g.indptr, g.indices, nodes, hops)
    return float(mask[ball].sum() / total)


def singleton_coverage_table(
    g: Graph, candidates: np.ndarray, hops: int, universe: np.ndarray | None = None
) -> np.ndarray:
    """Per-candidate coverage ratios, aligned with `candidates`."""
    mask = _universe_mask(g, universe)
    total = int(mask.sum())
    candidates = np.asarray(candidates, dtype=np.int64)
    table = np.empty(len(candidates))
    for i, v in enumerate(candidates):
        ball = bfs_ball(g.indptr, g.indices, np.array([v]), hops)
        table[i] = mask[ball].sum() / total
    return table


def coverage_max_sample(
    g: Graph,
    candidates: np.ndarray,
    hops: int,
    budget: int,
    rng: np.random.Generator,
    universe: np.ndarray | None = None,
    table: np.ndarray | None = None,
) -> np.ndarray:
    """Draw `budget` distinct candidates, each with probability proportional
    to its singleton coverage among the not-yet-drawn ones.

    Pass a precomputed `table` (from `singleton_coverage_table` with the
    same universe) to skip the per-candidate BFS.
    """
    candidates = np.asarray(candidates, dtype=np.int64)
    if len(np.unique(candidates)) != len(candidates):
        raise ValueError("candidates must be unique")
    if budget < 0:
        raise ValueError("budget must be >= 0")
    if budget > len(candidates):
        raise ValueError(f"budget {budget} exceeds {len(candidates)} candidates")
    if table is None:
        table = singleton_coverage_table(g, candidates, hops, universe)
    elif len(table) != len(candidates):
        raise ValueError("coverage table does not align with candidates")

    weights = np.asarray(table, dtype=np.float64).copy()
    if np.any(weights < 0):
        raise ValueError("coverage weights must be non-negative")
    chosen = np.empty(budget, dtype=np.int64)
    alive = np.ones(len(candidates), dtype=bool)
    for k in range(budget):
        idx_alive = np.flatnonzero(alive)
        w = weights[idx_alive]
        total = w.sum()
        if total <= 0.0:
            raise ValueError("remaining candidates have zero total coverage")
        cum = np.cumsum(w)
        r = rng.uniform(0.0, total)
        j = int(np.searchsorted(cum, r, side="right"))
        j = min(j, len(idx_alive) - 1)
        pick = idx_alive[j]
        chosen[k] = candidates[pick]
        alive[pick] = False
    return chosen
