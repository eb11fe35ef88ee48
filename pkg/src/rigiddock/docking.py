"""Rigid transforms and the pose head mapping matched point clouds to one.

The pose head selects attention keypoints on both proteins, solves the
orthogonal least-squares alignment between the two keypoint clouds in
closed form, and reads off the rigid motion that places the ligand
against the receptor. Everything is on the autodiff tape, so losses on
the transformed ligand reach the network weights.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .graphs import ProteinGraph
from .metrics import complex_rmsd
from .model import DockingModel, _random_rotation

TRANSFORM_CONVENTION = "y = R x + t, angstrom"
_ORTHO_TOL = 1e-8
_DEGENERATE_RATIO = 1e-9


class DegenerateKeypointsError(RuntimeError):
    """Keypoint cloud is too close to collinear to define a rotation."""


@dataclass(frozen=True)
class RigidTransform:
    """Proper rigid motion y = R x + t with R a rotation and t in angstroms."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=np.float64)
        t = np.asarray(self.t, dtype=np.float64).reshape(-1)
        if R.shape != (3, 3) or t.shape != (3,):
            raise ValueError(f"RigidTransform: R shape {R.shape}, t shape {t.shape}")
        if not (np.all(np.isfinite(R)) and np.all(np.isfinite(t))):
            raise ValueError("RigidTransform: non-finite entries")
        if np.max(np.abs(R.T @ R - np.eye(3))) > _ORTHO_TOL:
            raise ValueError("RigidTransform: R is not orthonormal")
        if abs(np.linalg.det(R) - 1.0) > _ORTHO_TOL:
            raise ValueError("RigidTransform: R is not a proper rotation (det != +1)")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    def apply(self, X: np.ndarray) -> np.ndarray:
        """Transform a 3 x n coordinate array."""
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[0] != 3:
            raise ValueError(f"apply: shape {X.shape}, expected (3, n)")
        return self.R @ X + self.t[:, None]

    def compose(self, inner: "RigidTransform") -> "RigidTransform":
        """The motion applying ``inner`` first, then this one."""
        return RigidTransform(self.R @ inner.R, self.R @ inner.t + self.t)

    def inverse(self) -> "RigidTransform":
        return RigidTransform(self.R.T, -(self.R.T @ self.t))

    def to_json(self) -> str:
        payload = {
            "R": self.R.tolist(),
            "t": self.t.tolist(),
            "convention": TRANSFORM_CONVENTION,
        }
        return json.dumps(payload, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "RigidTransform":
        payload = json.loads(text)
        convention = payload.get("convention", TRANSFORM_CONVENTION)
        if not convention.startswith("y = R x + t"):
            raise ValueError(f"unsupported transform convention: {convention!r}")
        return cls(np.array(payload["R"], dtype=np.float64),
                   np.array(payload["t"], dtype=np.float64))


def kabsch_tensors(Y1: ad.Tensor, Y2: ad.Tensor) -> tuple[ad.Tensor, ad.Tensor]:
    """Differentiable best-fit rigid motion taking cloud Y1 onto cloud Y2.

    Both are 3 x K with matched columns, K >= 3. The reflection-correction
    sign is read off the forward values and held constant in backward. A
    near-degenerate cloud (second singular value below 1e-9 of the first)
    cannot pin down the rotation and raises DegenerateKeypointsError.
    """
    if Y1.data.shape != Y2.data.shape or Y1.data.ndim != 2 or Y1.data.shape[0] != 3:
        raise ad.ShapeError(
            f"kabsch: shapes {Y1.data.shape} and {Y2.data.shape}, expected matching (3, K)")
    if Y1.data.shape[1] < 3:
        raise ad.ShapeError(f"kabsch: needs at least 3 points, got {Y1.data.shape[1]}")
    c1 = ad.reduce_mean(Y1, axis=1, keepdims=True)
    c2 = ad.reduce_mean(Y2, axis=1, keepdims=True)
    A = ad.matmul(ad.sub(Y2, c2), ad.transpose(ad.sub(Y1, c1)))
    decomp = ad.svd3(A)
    U, S, V = decomp.U, decomp.S, decomp.V
    if S.data[1] < _DEGENERATE_RATIO * max(S.data[0], 1e-300):
        raise DegenerateKeypointsError(
            f"keypoint spread is rank-deficient (singular values {S.data.tolist()})")
    d = float(np.sign(np.linalg.det(U.data @ V.data.T)))
    if d == 0.0:
        raise DegenerateKeypointsError("sign correction is undefined (det U V^T = 0)")
    correction = ad.constant(np.diag([1.0, 1.0, d]))
    R = ad.matmul(ad.matmul(U, correction), ad.transpose(V))
    t = ad.sub(c2, ad.matmul(R, c1))
    return R, t


def kabsch(Y1: np.ndarray, Y2: np.ndarray) -> RigidTransform:
    """Best-fit rigid motion between matched 3 x K clouds, as plain arrays."""
    R, t = kabsch_tensors(ad.constant(np.asarray(Y1, dtype=np.float64)),
                          ad.constant(np.asarray(Y2, dtype=np.float64)))
    return RigidTransform(R.data, t.data.ravel())


@dataclass
class DockResult:
    """Tape-connected outputs of one docking forward pass."""

    R: ad.Tensor            # 3 x 3 rotation
    t: ad.Tensor            # 3 x 1 translation
    Y1: ad.Tensor           # ligand keypoints, 3 x K
    Y2: ad.Tensor           # receptor keypoints, 3 x K
    ligand_pose: ad.Tensor  # predicted ligand coordinates, 3 x n1

    def transform(self) -> RigidTransform:
        return RigidTransform(self.R.data, self.t.data.ravel())


def dock_forward(model: DockingModel, ligand: ProteinGraph, receptor: ProteinGraph,
                 X_lig: np.ndarray | None = None,
                 X_rec: np.ndarray | None = None) -> DockResult:
    """Predict the rigid motion docking ``ligand`` onto ``receptor``.

    The receptor is centered before the network runs and the offset is
    added back to the translation and receptor keypoints, so the output is
    exact in the caller's frame regardless of where the receptor sits.
    """
    Xr = receptor.X if X_rec is None else np.asarray(X_rec, dtype=np.float64)
    center = Xr.mean(axis=1, keepdims=True)
    Z1, H1, Z2, H2 = model.forward(ligand, receptor, X1=X_lig, X2=Xr - center)
    Y1, _ = model.keypoints(Z1, H1, H2)
    Y2_centered, _ = model.keypoints(Z2, H2, H1)
    R, t_centered = kabsch_tensors(Y1, Y2_centered)
    offset = ad.constant(center)
    t = ad.add(t_centered, offset)
    Y2 = ad.add(Y2_centered, offset)
    Xl = ligand.X if X_lig is None else np.asarray(X_lig, dtype=np.float64)
    pose = ad.add(ad.matmul(R, ad.constant(Xl)), t)
    return DockResult(R=R, t=t, Y1=Y1, Y2=Y2, ligand_pose=pose)


def predict_dock(model: DockingModel, ligand: ProteinGraph, receptor: ProteinGraph,
                 X_lig: np.ndarray | None = None,
                 X_rec: np.ndarray | None = None) -> RigidTransform:
    """Convenience wrapper returning only the rigid motion."""
    return dock_forward(model, ligand, receptor, X_lig, X_rec).transform()


# ---------------------------------------------------------------------------
# Structural self-checks used by tests and the command line
# ---------------------------------------------------------------------------


def _rebuilt(g: ProteinGraph, R: np.ndarray, t: np.ndarray) -> ProteinGraph:
    from .graphs import build_graph

    return build_graph(g.residues.transformed(R, t), g.k)


def check_transform_covariance(model: DockingModel, ligand: ProteinGraph,
                               receptor: ProteinGraph, seed: int = 0,
                               trials: int = 5) -> float:
    """How exactly the predicted motion tracks rigid motions of the inputs.

    Moving the ligand by (Q1, g1) and the receptor by (Q2, g2) must turn a
    prediction (R, t) into R' = Q2 R Q1^T and t' = Q2 t + g2 - R' g1.
    Returns the worst relative deviation across random trials.
    """
    rng = np.random.default_rng(seed)
    base = predict_dock(model, ligand, receptor)
    worst = 0.0
    for _ in range(trials):
        Q1, g1 = _random_rotation(rng), rng.uniform(-30.0, 30.0, size=3)
        Q2, g2 = _random_rotation(rng), rng.uniform(-30.0, 30.0, size=3)
        moved = predict_dock(model, _rebuilt(ligand, Q1, g1), _rebuilt(receptor, Q2, g2))
        R_want = Q2 @ base.R @ Q1.T
        t_want = Q2 @ base.t + g2 - R_want @ g1
        dev_r = np.max(np.abs(moved.R - R_want))
        dev_t = np.max(np.abs(moved.t - t_want)) / max(1.0, np.max(np.abs(t_want)))
        worst = max(worst, dev_r, dev_t)
    return worst


def check_role_swap(model: DockingModel, ligand: ProteinGraph,
                    receptor: ProteinGraph) -> float:
    """Deviation between the swapped prediction and the inverse motion.

    Docking A onto B and B onto A must produce mutually inverse transforms:
    R_BA = R_AB^T and t_BA = -R_AB^T t_AB.
    """
    fwd = predict_dock(model, ligand, receptor)
    rev = predict_dock(model, receptor, ligand)
    inv = fwd.inverse()
    dev_r = np.max(np.abs(rev.R - inv.R))
    dev_t = np.max(np.abs(rev.t - inv.t)) / max(1.0, np.max(np.abs(inv.t)))
    return max(dev_r, dev_t)


def check_complex_invariance(model: DockingModel, ligand: ProteinGraph,
                             receptor: ProteinGraph, seed: int = 0,
                             trials: int = 5) -> float:
    """Worst RMSD between predicted complexes across random input poses.

    The assembled complex (posed ligand plus receptor) from any rigidly
    moved inputs must superimpose onto the base complex exactly.
    """
    rng = np.random.default_rng(seed)
    base = predict_dock(model, ligand, receptor)
    base_lig = base.apply(ligand.X)
    worst = 0.0
    for _ in range(trials):
        Q1, g1 = _random_rotation(rng), rng.uniform(-30.0, 30.0, size=3)
        Q2, g2 = _random_rotation(rng), rng.uniform(-30.0, 30.0, size=3)
        lig_g = _rebuilt(ligand, Q1, g1)
        rec_g = _rebuilt(receptor, Q2, g2)
        moved = predict_dock(model, lig_g, rec_g)
        # express the moved prediction back in the receptor's base frame
        undo = RigidTransform(Q2, g2).inverse()
        pred_lig = undo.apply(moved.apply(lig_g.X))
        worst = max(worst, complex_rmsd(pred_lig, base_lig, receptor.X))
    return worst
