"""Protein graphs: k-NN topology plus rigid-motion-invariant features.

Each node is a residue at its CA position. Edges j->i connect every node i
to its k nearest residues by CA distance (ties broken toward the lower
sequence index). Per-edge features are expressed in residue i's local frame,
so the whole feature set is unchanged by any rigid motion of the protein.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .pdbio import ResidueSet, local_frames

log = logging.getLogger(__name__)

DEFAULT_K = 10
SURFACE_LAMBDAS = (1.0, 2.0, 5.0, 10.0, 30.0)
RBF_SIGMAS = tuple(1.5 ** x for x in range(15))
EDGE_FEATURE_DIM = 12 + len(RBF_SIGMAS)  # 3 position + 9 orientation + 15 RBF


@dataclass
class ProteinGraph:
    """Immutable featurized protein.

    X: 3 x n CA coordinates. types: n residue-type indices. rho: n x 5
    surface features. src/dst: directed edges src->dst. edge_feats:
    27 x E, column order matching src/dst. residues: the source ResidueSet
    (kept so the graph can be rebuilt after rigid motions). k: effective
    neighbor count.
    """

    X: np.ndarray
    types: np.ndarray
    rho: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    edge_feats: np.ndarray
    residues: ResidueSet
    k: int

    @property
    def n_nodes(self) -> int:
        return self.X.shape[1]

    @property
    def n_edges(self) -> int:
        return self.src.shape[0]


def knn_edges(X: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Directed edge lists (src, dst): each dst receives its k nearest nodes.

    Brute-force O(n^2) distances; ties resolved toward lower node index.
    """
    n = X.shape[1]
    diff = X[:, :, None] - X[:, None, :]
    d2 = np.sum(diff * diff, axis=0)
    np.fill_diagonal(d2, np.inf)
    src = np.empty(n * k, dtype=np.intp)
    dst = np.empty(n * k, dtype=np.intp)
    idx = np.arange(n)
    for i in range(n):
        order = np.lexsort((idx, d2[i]))
        src[i * k:(i + 1) * k] = order[:k]
        dst[i * k:(i + 1) * k] = i
    return src, dst


def surface_features(
    X: np.ndarray,
    neighbor_lists: list[np.ndarray],
    lambdas: tuple[float, ...] = SURFACE_LAMBDAS,
) -> np.ndarray:
    """Per-node surface scores in [0, 1], one column per length scale.

    For each node, neighbor offsets are averaged with weights softmax over
    -d^2/lambda; the score is the norm of that average divided by the
    weighted average of the offset norms. Interior nodes see offsets that
    cancel (score near 0); surface nodes see one-sided offsets (near 1).
    """
    n = X.shape[1]
    out = np.zeros((n, len(lambdas)))
    for i in range(n):
        nbrs = np.asarray(neighbor_lists[i], dtype=np.intp)
        if nbrs.size == 0:
            raise ValueError(f"surface_features: node {i} has no neighbors")
        offsets = X[:, i][:, None] - X[:, nbrs]
        d2 = np.sum(offsets * offsets, axis=0)
        norms = np.sqrt(d2)
        for col, lam in enumerate(lambdas):
            logits = -d2 / lam
            logits -= logits.max()
            w = np.exp(logits)
            w /= w.sum()
            numer = np.linalg.norm(offsets @ w)
            denom = np.dot(w, norms)
            out[i, col] = numer / denom if denom > 0 else 0.0
    return out


def _edge_feature_block(
    X: np.ndarray,
    frames: tuple[np.ndarray, np.ndarray, np.ndarray],
    src: np.ndarray,
    dst: np.ndarray,
) -> np.ndarray:
    """27 features per edge j->i, all expressed in i's (n, u, v) basis."""
    n_ax, u_ax, v_ax = frames
    # basis[i] has rows n_i, u_i, v_i
    basis = np.stack([n_ax.T, u_ax.T, v_ax.T], axis=1)
    b_dst = basis[dst]  # E x 3 x 3
    rel = (X[:, src] - X[:, dst]).T  # E x 3
    p = np.einsum("eab,eb->ea", b_dst, rel)
    q = np.einsum("eab,eb->ea", b_dst, n_ax[:, src].T)
    k = np.einsum("eab,eb->ea", b_dst, u_ax[:, src].T)
    t = np.einsum("eab,eb->ea", b_dst, v_ax[:, src].T)
    d2 = np.sum(rel * rel, axis=1)
    rbf = np.exp(-d2[:, None] / (2.0 * np.asarray(RBF_SIGMAS) ** 2))
    return np.concatenate([p, q, k, t, rbf], axis=1).T


def build_graph(rs: ResidueSet, k: int = DEFAULT_K) -> ProteinGraph:
    """Featurized k-NN graph over a residue set.

    k is lowered to n-1 when the protein is smaller than k+1 residues.
    Raises ValueError for proteins with fewer than 2 residues.
    """
    n = len(rs)
    if n < 2:
        raise ValueError(f"build_graph: need at least 2 residues, got {n}")
    if k < 1:
        raise ValueError(f"build_graph: k must be >= 1, got {k}")
    k_eff = min(k, n - 1)
    if k_eff != k:
        log.info("build_graph: lowering k from %d to %d for %d residues", k, k_eff, n)
    X = rs.ca
    src, dst = knn_edges(X, k_eff)
    frames = local_frames(rs)
    feats = _edge_feature_block(X, frames, src, dst)
    neighbor_lists = [src[dst == i] for i in range(n)]
    rho = surface_features(X, neighbor_lists)
    return ProteinGraph(
        X=X.copy(),
        types=rs.types.copy(),
        rho=rho,
        src=src,
        dst=dst,
        edge_feats=feats,
        residues=rs,
        k=k_eff,
    )
