"""Training loop, Adam optimizer, and pose evaluation.

Each pair contributes two examples per epoch (each protein takes a turn
as the mobile side), the mobile input is re-randomized by a rigid motion
every step, and validation scores the median unaligned pose error on the
held-out pairs. Checkpoints are written only when validation improves by
a real margin, and training stops after a patience window without one.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .checkpoint import save_named_tensors
from .docking import DegenerateKeypointsError, RigidTransform, dock_forward, predict_dock
from .graphs import ProteinGraph, build_graph
from .losses import NoContactError, pocket_points, total_loss
from .metrics import complex_rmsd, interface_rmsd, ligand_rmsd
from .model import DockingModel, _random_rotation
from .synthetic import DockingPair

logger = logging.getLogger("rigiddock.training")


@dataclass
class TrainConfig:
    lr: float = 2e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    max_epochs: int = 200
    patience: int = 30           # epochs without an accepted improvement
    improvement_factor: float = 0.98
    w_mse: float = 1.0
    w_ot: float = 1.0
    w_ni: float = 1.0
    translation_scale: float = 30.0
    seed: int = 0

    @classmethod
    def fine_tune(cls, **overrides) -> "TrainConfig":
        """Preset for refining an already trained model."""
        base = {"lr": 1e-4, "patience": 150}
        base.update(overrides)
        return cls(**base)


def random_se3(rng: np.random.Generator, translation_scale: float = 30.0) -> RigidTransform:
    """Uniform random rotation with a uniform boxed translation."""
    return RigidTransform(_random_rotation(rng),
                          rng.uniform(-translation_scale, translation_scale, size=3))


class Adam:
    """Adam with decoupled weight decay over a named parameter dict."""

    def __init__(self, params: dict[str, ad.Tensor], lr: float,
                 beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.step_count = 0
        self._m = {name: np.zeros_like(p.data) for name, p in params.items()}
        self._v = {name: np.zeros_like(p.data) for name, p in params.items()}

    def step(self) -> None:
        self.step_count += 1
        b1t = 1.0 - self.beta1 ** self.step_count
        b2t = 1.0 - self.beta2 ** self.step_count
        for name, p in self.params.items():
            if p.grad is None:
                continue
            g = p.grad
            m = self._m[name]
            v = self._v[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            update = (m / b1t) / (np.sqrt(v / b2t) + self.eps)
            if self.weight_decay > 0.0:
                update = update + self.weight_decay * p.data
            p.data -= self.lr * update

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()


@dataclass
class PreparedPair:
    pair_id: str
    graph_lig: ProteinGraph
    graph_rec: ProteinGraph
    bound_lig: np.ndarray   # 3 x n1, bound frame
    bound_rec: np.ndarray   # 3 x n2, bound frame
    midpoints: np.ndarray   # 3 x S contact midpoints on the bound complex


def prepare_pair(pair: DockingPair, neighbors: int = 10) -> PreparedPair:
    """Graphs plus bound-frame geometry reused across epochs.

    Raises NoContactError when the bound complex has no contact pairs.
    """
    bound_lig = pair.bound_ligand()
    bound_rec = pair.receptor.ca
    midpoints = pocket_points(bound_lig, bound_rec)
    return PreparedPair(
        pair_id=pair.pair_id,
        graph_lig=build_graph(pair.ligand, neighbors),
        graph_rec=build_graph(pair.receptor, neighbors),
        bound_lig=bound_lig,
        bound_rec=bound_rec,
        midpoints=midpoints,
    )


def _training_step(model: DockingModel, prep: PreparedPair, swap: bool,
                   move: RigidTransform, config: TrainConfig):
    """Loss for one direction of one pair with the mobile side re-posed."""
    if swap:
        mobile_g, fixed_g = prep.graph_rec, prep.graph_lig
        mobile_bound, fixed_bound = prep.bound_rec, prep.bound_lig
    else:
        mobile_g, fixed_g = prep.graph_lig, prep.graph_rec
        mobile_bound, fixed_bound = prep.bound_lig, prep.bound_rec
    X_mobile = move.apply(mobile_bound)
    result = dock_forward(model, mobile_g, fixed_g, X_lig=X_mobile, X_rec=fixed_bound)
    return total_loss(
        result.ligand_pose,
        mobile_bound,
        result.Y1,
        result.Y2,
        move.apply(prep.midpoints),
        prep.midpoints,
        fixed_bound,
        w_mse=config.w_mse,
        w_ot=config.w_ot,
        w_ni=config.w_ni,
    )


def validation_metric(model: DockingModel, prepped: list[PreparedPair]) -> float:
    """Median unaligned pose RMSD over pairs, predicted from stored inputs.

    Predictions are invariant to rigid motions of the inputs, so no extra
    perturbation is applied here; the stored pose is as good as any.
    """
    errors = []
    for prep in prepped:
        try:
            tr = predict_dock(model, prep.graph_lig, prep.graph_rec,
                              X_rec=prep.bound_rec)
            pred = tr.apply(prep.graph_lig.X)
        except DegenerateKeypointsError:
            pred = prep.graph_lig.X
        errors.append(ligand_rmsd(pred, prep.bound_lig))
    return float(np.median(errors))


@dataclass
class TrainResult:
    best_val: float
    epochs_run: int
    steps: int
    skipped_pairs: list[str]
    history: list[dict] = field(default_factory=list)


def train(model: DockingModel, train_pairs: list[DockingPair],
          val_pairs: list[DockingPair], config: TrainConfig,
          checkpoint_path: str | None = None,
          loss_csv_path: str | None = None) -> TrainResult:
    """Optimize ``model`` in place; returns the run summary.

    Pairs whose bound complex has no contacts are skipped with a warning;
    if every training pair is skipped that is an error.
    """
    skipped: list[str] = []
    prepped: list[PreparedPair] = []
    for pair in train_pairs:
        try:
            prepped.append(prepare_pair(pair, model.config.neighbors))
        except NoContactError:
            skipped.append(pair.pair_id)
            logger.warning("skipping %s: no contacts in the bound complex", pair.pair_id)
    if not prepped:
        raise ValueError("every training pair was skipped (no contacts anywhere)")
    val_prepped = []
    for pair in val_pairs:
        try:
            val_prepped.append(prepare_pair(pair, model.config.neighbors))
        except NoContactError:
            skipped.append(pair.pair_id)
            logger.warning("skipping %s: no contacts in the bound complex", pair.pair_id)

    rng = np.random.default_rng(config.seed)
    optimizer = Adam(model.params, config.lr, config.beta1, config.beta2,
                     config.eps, config.weight_decay)
    csv_file = open(loss_csv_path, "w", newline="") if loss_csv_path else None
    writer = None
    if csv_file is not None:
        writer = csv.writer(csv_file)
        writer.writerow(["step", "mse", "ot", "intersection", "total"])

    best_val = np.inf
    best_epoch = -1
    steps = 0
    history = []
    try:
        for epoch in range(config.max_epochs):
            order = rng.permutation(len(prepped))
            epoch_total = 0.0
            epoch_steps = 0
            for idx in order:
                prep = prepped[idx]
                for swap in (False, True):
                    move = random_se3(rng, config.translation_scale)
                    optimizer.zero_grad()
                    try:
                        with ad.Tape() as tape:
                            loss, parts = _training_step(model, prep, swap, move, config)
                            tape.backward(loss)
                    except DegenerateKeypointsError:
                        logger.warning("degenerate keypoints on %s (swap=%s); step skipped",
                                       prep.pair_id, swap)
                        continue
                    optimizer.step()
                    steps += 1
                    epoch_steps += 1
                    epoch_total += parts["total"]
                    if writer is not None:
                        writer.writerow([steps, f"{parts['mse']:.6f}", f"{parts['ot']:.6f}",
                                         f"{parts['intersection']:.6f}", f"{parts['total']:.6f}"])
            val = validation_metric(model, val_prepped) if val_prepped else np.nan
            mean_loss = epoch_total / max(epoch_steps, 1)
            history.append({"epoch": epoch, "mean_loss": mean_loss, "val": val})
            logger.info("epoch %d: mean loss %.4f, val %.4f", epoch, mean_loss, val)
            if val_prepped and val < config.improvement_factor * best_val:
                best_val = val
                best_epoch = epoch
                if checkpoint_path is not None:
                    save_named_tensors(checkpoint_path, model.state_arrays(),
                                       extra={"config": model.config.to_dict(),
                                              "val_metric": val, "epoch": epoch})
            if val_prepped and epoch - best_epoch >= config.patience:
                logger.info("stopping: no improvement in %d epochs", config.patience)
                break
    finally:
        if csv_file is not None:
            csv_file.close()
    if not val_prepped and checkpoint_path is not None:
        save_named_tensors(checkpoint_path, model.state_arrays(),
                           extra={"config": model.config.to_dict(),
                                  "val_metric": None, "epoch": config.max_epochs - 1})
    return TrainResult(best_val=float(best_val), epochs_run=len(history),
                       steps=steps, skipped_pairs=skipped, history=history)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------


@dataclass
class EvalRow:
    pair_id: str
    crmsd: float
    irmsd: float
    status: str


@dataclass
class EvalReport:
    rows: list[EvalRow]

    def summary(self) -> dict[str, float]:
        out = {}
        for metric in ("crmsd", "irmsd"):
            values = np.array([getattr(r, metric) for r in self.rows])
            out[f"{metric}_median"] = float(np.median(values))
            out[f"{metric}_mean"] = float(values.mean())
            out[f"{metric}_std"] = float(values.std())
        return out


def evaluate(model: DockingModel, pairs: list[DockingPair], seed: int = 0,
             perturb: bool = True) -> EvalReport:
    """Dock each pair from a randomized input pose and score against truth.

    A pair whose prediction degenerates falls back to its input pose and
    is marked in the row status rather than crashing the run.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for pair in pairs:
        g_lig = build_graph(pair.ligand, model.config.neighbors)
        g_rec = build_graph(pair.receptor, model.config.neighbors)
        bound_lig = pair.bound_ligand()
        X_in = g_lig.X
        if perturb:
            X_in = random_se3(rng).apply(X_in)
        try:
            tr = predict_dock(model, g_lig, g_rec, X_lig=X_in)
            pred = tr.apply(X_in)
            status = "ok"
        except DegenerateKeypointsError:
            pred = X_in
            status = "degenerate"
        crmsd = complex_rmsd(pred, bound_lig, g_rec.X)
        irmsd = interface_rmsd(pred, bound_lig, g_rec.X)
        rows.append(EvalRow(pair.pair_id, crmsd, irmsd, status))
    return EvalReport(rows)


def write_eval_csv(report: EvalReport, path: str) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["pair_id", "crmsd", "irmsd", "status"])
        for row in report.rows:
            writer.writerow([row.pair_id, f"{row.crmsd:.6f}", f"{row.irmsd:.6f}", row.status])
        summary = report.summary()
        for key in sorted(summary):
            writer.writerow([key, f"{summary[key]:.6f}", "", ""])
