"""Independent oracles and small builders shared by the test suite.

Everything here deliberately avoids the package's own code paths: dense
matrices instead of CSR, python sets instead of frontier arrays, finite
differences instead of backprop. The package must agree with these, not
the other way around.
"""
from __future__ import annotations

import numpy as np

# ---------------------------------------------------------------------------
# dense graph oracles
# ---------------------------------------------------------------------------


def dense_adjacency(num_nodes: int, edges: np.ndarray) -> np.ndarray:
    """Symmetric 0/1 adjacency from an (m, 2) undirected edge array."""
    a = np.zeros((num_nodes, num_nodes))
    for u, v in np.asarray(edges).reshape(-1, 2):
        if u != v:
            a[u, v] = 1.0
            a[v, u] = 1.0
    return a


def dense_normalized(a: np.ndarray, self_loops: bool) -> np.ndarray:
    """D^{-1/2} (A [+ I]) D^{-1/2} with zero rows for isolated nodes."""
    a = a.copy()
    if self_loops:
        a = a + np.eye(len(a))
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    return inv[:, None] * a * inv[None, :]


def dense_propagation_matrix(a_hat: np.ndarray, variant: str, hops: int,
                             alpha: float | None = None) -> np.ndarray:
    """The full propagation operator, materialised densely.

    power:       a_hat^L
    hop_average: (1/L) * sum_{l=1..L} ((1-alpha) a_hat^l + alpha I)
    lazy_power:  ((1-alpha) a_hat + alpha I)^L
    """
    n = len(a_hat)
    eye = np.eye(n)
    if variant == "power":
        return np.linalg.matrix_power(a_hat, hops)
    if variant == "hop_average":
        acc = np.zeros((n, n))
        for ell in range(1, hops + 1):
            acc += (1.0 - alpha) * np.linalg.matrix_power(a_hat, ell) + alpha * eye
        return acc / hops
    if variant == "lazy_power":
        return np.linalg.matrix_power((1.0 - alpha) * a_hat + alpha * eye, hops)
    raise ValueError(variant)


def ball_oracle(num_nodes: int, edges: np.ndarray, seeds, hops: int) -> set[int]:
    """All nodes within `hops` edges of any seed, via plain set BFS."""
    nbrs: dict[int, set[int]] = {v: set() for v in range(num_nodes)}
    for u, v in np.asarray(edges).reshape(-1, 2):
        if u != v:
            nbrs[int(u)].add(int(v))
            nbrs[int(v)].add(int(u))
    reached = {int(s) for s in np.atleast_1d(seeds)}
    frontier = set(reached)
    for _ in range(hops):
        nxt = set()
        for u in frontier:
            nxt |= nbrs[u]
        frontier = nxt - reached
        reached |= nxt
        if not frontier:
            break
    return reached


# ---------------------------------------------------------------------------
# tiny graph builders (edge arrays, not package objects)
# ---------------------------------------------------------------------------


def path_edges(n: int) -> np.ndarray:
    return np.array([[i, i + 1] for i in range(n - 1)], dtype=np.int64)


def star_edges(leaves: int, center: int = 0) -> np.ndarray:
    others = [v for v in range(leaves + 1) if v != center]
    return np.array([[center, v] for v in others], dtype=np.int64)


def random_edges(num_nodes: int, p: float, rng: np.random.Generator) -> np.ndarray:
    mask = np.triu(rng.random((num_nodes, num_nodes)) < p, 1)
    return np.argwhere(mask).astype(np.int64)


# ---------------------------------------------------------------------------
# finite-difference gradient oracle
# ---------------------------------------------------------------------------


def central_difference(loss_fn, arrays: list[np.ndarray], h: float = 1e-5) -> list[np.ndarray]:
    """Central finite differences of a scalar function of several arrays.

    Perturbs every entry of every array in place (restoring it afterwards),
    so `loss_fn` must read the arrays fresh on each call.
    """
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr)
        flat = arr.ravel()
        gflat = g.ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + h
            up = loss_fn()
            flat[i] = keep - h
            down = loss_fn()
            flat[i] = keep
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(g)
    return grads
