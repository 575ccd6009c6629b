"""Layered time-expanded graphs and their shortest paths."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .kernels import backward_min_plus


@dataclass(frozen=True)
class TimeExpandedGraph:
    """A layered DAG with ``N`` node slots per layer.

    ``weights[l, a, b]`` is the cost of edge ``(l, a) -> (l + 1, b)`` and
    ``inf`` marks a missing edge.  Every node of the last layer may leave
    to a dummy sink at cost ``terminal[a]``.  ``labels[a]`` names slot ``a``.
    """

    weights: np.ndarray
    terminal: np.ndarray
    source: int
    labels: tuple = field(default=())

    def __post_init__(self):
        W = np.asarray(self.weights, dtype=float)
        if W.ndim != 3 or W.shape[1] != W.shape[2]:
            raise ValueError("weights must have shape (layers - 1, N, N)")
        term = np.asarray(self.terminal, dtype=float).ravel()
        if term.size != W.shape[1]:
            raise ValueError("terminal weights must have one entry per node slot")
        if np.any(np.isnan(W)) or np.any(np.isnan(term)) or np.any(W == -np.inf):
            raise ValueError("edge weights must be finite or +inf")
        object.__setattr__(self, "weights", W)
        object.__setattr__(self, "terminal", term)

    @property
    def n_layers(self) -> int:
        return self.weights.shape[0] + 1

    @property
    def width(self) -> int:
        return self.weights.shape[1]

    def edges(self):
        """Yield ``(layer, a, b, weight)`` for every present edge."""
        for layer in range(self.weights.shape[0]):
            a_idx, b_idx = np.nonzero(np.isfinite(self.weights[layer]))
            for a, b in zip(a_idx, b_idx):
                yield layer, int(a), int(b), float(self.weights[layer, a, b])


@dataclass(frozen=True)
class PathResult:
    cost: float
    nodes: tuple  # one slot index per layer
    cost_to_go: np.ndarray = field(repr=False, default=None)


def shortest_path(graph: TimeExpandedGraph, tol: float = 1e-12) -> PathResult:
    """Source-to-sink shortest path by backward relaxation, O(layers * N^2).

    Ties go to the smallest slot index in the earliest layer where paths
    differ.
    """
    cost, choice = backward_min_plus(graph.weights, graph.terminal, tol)
    best = float(cost[0, graph.source])
    if not np.isfinite(best):
        raise ValueError("no path from the source reaches the sink")
    nodes = [graph.source]
    for layer in range(graph.n_layers - 1):
        nodes.append(int(choice[layer, nodes[-1]]))
    return PathResult(best, tuple(nodes), cost)


def longest_path(graph: TimeExpandedGraph, tol: float = 1e-12) -> PathResult:
    """Longest path on a graph whose weights are given as gains."""
    neg = TimeExpandedGraph(np.where(np.isfinite(graph.weights), -graph.weights, np.inf),
                            -graph.terminal, graph.source, graph.labels)
    res = shortest_path(neg, tol)
    return PathResult(-res.cost, res.nodes, -res.cost_to_go)


def bellman_ford(graph: TimeExpandedGraph) -> float:
    """Reference shortest-path cost by plain edge relaxation (for testing)."""
    L, N = graph.n_layers, graph.width
    sink = L * N
    dist = np.full(L * N + 1, np.inf)
    dist[graph.source] = 0.0
    edges = [(layer * N + a, (layer + 1) * N + b, w) for layer, a, b, w in graph.edges()]
    edges += [((L - 1) * N + a, sink, float(graph.terminal[a])) for a in range(N) if np.isfinite(graph.terminal[a])]
    for _ in range(L + 1):
        changed = False
        for u, v, w in edges:
            if dist[u] + w < dist[v]:
                dist[v] = dist[u] + w
                changed = True
        if not changed:
            break
    return float(dist[sink])
