"""Vectorized numpy implementations of the layered path kernels."""
from __future__ import annotations

import numpy as np


def backward_min_plus(W, terminal, tol=1e-12):
    """Cost-to-go over a layered DAG.

    ``W[l, a, b]`` is the weight of the edge from node ``a`` in layer ``l``
    to node ``b`` in layer ``l + 1`` (``inf`` when absent); ``terminal[a]``
    is the weight of leaving the last layer.  Returns ``(cost, choice)``
    where ``choice[l, a]`` is the smallest successor index attaining the
    minimum within ``tol * (1 + |min|)``, or ``-1`` if none is finite.
    """
    W = np.asarray(W, dtype=np.float64)
    L1, N, _ = W.shape
    cost = np.empty((L1 + 1, N))
    choice = np.full((L1, N), -1, dtype=np.int64)
    cost[L1] = terminal
    for layer in range(L1 - 1, -1, -1):
        cand = W[layer] + cost[layer + 1][None, :]
        best = cand.min(axis=1)
        ok = np.isfinite(best)
        thresh = best + tol * (1.0 + np.abs(best))
        first = np.argmax(cand <= thresh[:, None], axis=1)
        choice[layer, ok] = first[ok]
        cost[layer] = best
    return cost, choice


def soc_edge_weights(prices, travel, kappa, limits, h, z, admissible):
    """Dense weights of the (bus, SoC level) graph for one period transition.

    ``limits[i, j]`` bounds ``|u|`` for a move ``i -> j``.  Node ``i * (z+1)
    + k`` stands for bus ``i`` holding ``k * h``.  Weights are costs
    (``price * u + kappa * D``); infeasible edges are ``inf``.
    """
    n = travel.shape[0]
    k = np.arange(z + 1)
    du = (k[None, :] - k[:, None]) * h  # du[k1, k2]
    W = np.full((n, z + 1, n, z + 1), np.inf)
    for i in range(n):
        if not admissible[i]:
            continue
        for j in range(n):
            if not admissible[j] or not np.isfinite(travel[i, j]):
                continue
            ok = np.abs(du) <= limits[i, j] + 1e-9 * (1.0 + h)
            W[i, :, j, :] = np.where(ok, prices[i] * du + kappa * travel[i, j], np.inf)
    return W.reshape(n * (z + 1), n * (z + 1))
