"""Training objectives: coordinate MSE, pocket optimal transport, intersection.

Every loss returns a scalar Tensor so it can run under a recording tape
during training or tape-free for plain evaluation.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .transport import solve_uniform_transport

POCKET_TAU = 8.0
INTERSECTION_GAMMA = 10.0
INTERSECTION_SIGMA = 25.0


class NoContactError(ValueError):
    """The two proteins share no residue pair within the pocket cutoff."""


def pocket_points(X1: np.ndarray, X2: np.ndarray, tau: float = POCKET_TAU) -> np.ndarray:
    """Midpoints of all cross-protein residue pairs closer than tau (3 x S).

    Expects bound-pose coordinates; the unbound-pose copies are obtained by
    applying each protein's own rigid motion to the returned matrix.
    Raises NoContactError when no pair qualifies.
    """
    X1 = np.asarray(X1, dtype=np.float64)
    X2 = np.asarray(X2, dtype=np.float64)
    diff = X1[:, :, None] - X2[:, None, :]
    d2 = np.sum(diff * diff, axis=0)
    ii, jj = np.nonzero(d2 < tau * tau)
    if ii.size == 0:
        raise NoContactError(f"no residue pairs within {tau} A")
    return 0.5 * (X1[:, ii] + X2[:, jj])


def ot_pocket_loss(Y1: ad.Tensor, Y2: ad.Tensor, P1: np.ndarray, P2: np.ndarray) -> ad.Tensor:
    """Earth mover's cost matching keypoint pairs to pocket points.

    Cost of pairing pocket index s with keypoint index k is
    ||y1_k - p1_s||^2 + ||y2_k - p2_s||^2. The optimal plan is computed
    exactly, then frozen: gradients flow through the cost matrix only.
    """
    cost = ad.add(
        ad.pairwise_sqdist(ad.constant(P1), Y1),
        ad.pairwise_sqdist(ad.constant(P2), Y2),
    )
    plan, _ = solve_uniform_transport(cost.data)
    return ad.reduce_sum(ad.mul(cost, ad.constant(plan)))


def surface_field(points: ad.Tensor, cloud: ad.Tensor,
                  sigma: float = INTERSECTION_SIGMA) -> ad.Tensor:
    """Soft-min squared distance from each point (column) to the cloud.

    Returns an m x 1 tensor of G(x) = -sigma * ln sum_i exp(-||x - x_i||^2 / sigma),
    evaluated with log-sum-exp shifting so distances up to ~1e4 never overflow.
    """
    sqd = ad.pairwise_sqdist(points, cloud)
    scaled = ad.scale(sqd, -1.0 / sigma)
    shift = ad.constant(scaled.data.max(axis=1, keepdims=True))
    lse = ad.add(shift, ad.log(ad.reduce_sum(ad.exp(ad.sub(scaled, shift)), axis=1, keepdims=True)))
    return ad.scale(lse, -sigma)


def surface_G(x, X, sigma: float = INTERSECTION_SIGMA) -> float:
    """Scalar surface function at one probe position."""
    probe = ad.constant(np.asarray(x, dtype=np.float64).reshape(3, 1))
    return surface_field(probe, ad.constant(X), sigma).item()


def intersection_loss(X1: ad.Tensor | np.ndarray, X2: ad.Tensor | np.ndarray,
                      gamma: float = INTERSECTION_GAMMA,
                      sigma: float = INTERSECTION_SIGMA) -> ad.Tensor:
    """Penalty for either point cloud entering the other's interior.

    Sum of both directional means of max(0, gamma - G_other(x)).
    """
    t1 = X1 if isinstance(X1, ad.Tensor) else ad.constant(X1)
    t2 = X2 if isinstance(X2, ad.Tensor) else ad.constant(X2)
    level = ad.constant(np.array(gamma))
    depth1 = ad.relu(ad.sub(level, surface_field(t1, t2, sigma)))
    depth2 = ad.relu(ad.sub(level, surface_field(t2, t1, sigma)))
    return ad.add(ad.reduce_mean(depth1), ad.reduce_mean(depth2))


def mse_loss(pred: ad.Tensor, target: np.ndarray) -> ad.Tensor:
    """Mean over columns of the squared Euclidean deviation."""
    if pred.data.shape != np.asarray(target).shape:
        raise ad.ShapeError(f"mse_loss: shapes {pred.data.shape} and {np.asarray(target).shape}")
    diff = ad.sub(pred, ad.constant(target))
    return ad.scale(ad.reduce_sum(ad.mul(diff, diff)), 1.0 / pred.data.shape[1])


def total_loss(
    pred_ligand: ad.Tensor,
    true_ligand: np.ndarray,
    Y1: ad.Tensor,
    Y2: ad.Tensor,
    P1: np.ndarray,
    P2: np.ndarray,
    receptor_X: np.ndarray,
    w_mse: float = 1.0,
    w_ot: float = 1.0,
    w_ni: float = 1.0,
) -> tuple[ad.Tensor, dict[str, float]]:
    """Weighted sum of the three objectives plus a per-term breakdown."""
    mse = mse_loss(pred_ligand, true_ligand)
    ot = ot_pocket_loss(Y1, Y2, P1, P2)
    ni = intersection_loss(pred_ligand, ad.constant(receptor_X))
    parts = {"mse": mse.item(), "ot": ot.item(), "intersection": ni.item()}
    total = ad.add(ad.add(ad.scale(mse, w_mse), ad.scale(ot, w_ot)), ad.scale(ni, w_ni))
    parts["total"] = total.item()
    return total, parts
