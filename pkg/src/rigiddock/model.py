"""Graph matching network over protein pairs, equivariant by construction.

Each layer passes messages along the frozen k-NN edges of both proteins,
exchanges feature-only attention messages across the pair, and moves
coordinates along difference vectors scaled by learned gates. Feature
channels see only rigid-motion-invariant quantities (initial features,
distances, latent embeddings), so arbitrary independent rigid motions of
the two inputs carry through to the coordinate outputs and leave the
feature outputs untouched.

Parameters live in a flat name -> Tensor mapping whose keys
(``iegmn.layer{l}.*``, ``embed.*``, ``keypoints.*``) are the checkpoint
interface.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from . import autodiff as ad
from .graphs import EDGE_FEATURE_DIM, ProteinGraph, build_graph
from .pdbio import RESIDUE_TYPES

SURFACE_FEATURES = 5


@dataclass
class ModelConfig:
    hidden_dim: int = 32
    layers: int = 5
    heads: int = 50
    neighbors: int = 10
    leaky_slope: float = 0.01
    eta: float = 0.25           # weight pulling coordinates back to the input
    beta: float = 0.5           # mixing weight of the feature update
    sigma_msg: float = 30.0     # squared-distance scale inside edge messages
    share_layers: bool = False  # layers after the first reuse one parameter set
    normalize_h: bool = True
    mean_coord_update: bool = False

    def __post_init__(self):
        if self.layers < 1:
            raise ValueError("layers must be >= 1")
        if self.heads < 1:
            raise ValueError("heads must be >= 1")
        if not (0.0 <= self.eta <= 1.0 and 0.0 <= self.beta <= 1.0):
            raise ValueError("eta and beta must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


def _glorot(rng: np.random.Generator, rows: int, cols: int) -> np.ndarray:
    limit = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-limit, limit, size=(rows, cols))


class DockingModel:
    """Learnable network mapping a protein pair to matched point clouds."""

    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        self.params: dict[str, ad.Tensor] = {}
        rng = np.random.default_rng(seed)
        d = config.hidden_dim
        feat = d + SURFACE_FEATURES

        self._param(rng, "embed.table", d, len(RESIDUE_TYPES))
        self._param(rng, "embed.project.W", d, feat)
        self._zero("embed.project.b", d, 1)

        for l in range(self._unique_layers()):
            p = f"iegmn.layer{l}."
            self._param(rng, p + "phi_e.lin0.W", d, 2 * d + 1 + EDGE_FEATURE_DIM)
            self._zero(p + "phi_e.lin0.b", d, 1)
            self._param(rng, p + "phi_e.lin1.W", d, d)
            self._zero(p + "phi_e.lin1.b", d, 1)
            self._param(rng, p + "phi_x.lin0.W", d, d)
            self._zero(p + "phi_x.lin0.b", d, 1)
            # zero-initialized gate: the network starts coordinate-preserving
            self._zero(p + "phi_x.lin1.W", 1, d)
            self._zero(p + "phi_x.lin1.b", 1, 1)
            self._param(rng, p + "phi_h.lin0.W", d, 3 * d + feat)
            self._zero(p + "phi_h.lin0.b", d, 1)
            self._param(rng, p + "phi_h.lin1.W", d, d)
            self._zero(p + "phi_h.lin1.b", d, 1)
            self._param(rng, p + "cross.W", d, d)
            self._param(rng, p + "att_q.W", d, d)
            self._zero(p + "att_q.b", d, 1)
            self._param(rng, p + "att_k.W", d, d)
            self._zero(p + "att_k.b", d, 1)

        self._param(rng, "keypoints.phi.W", d, d)
        self._zero("keypoints.phi.b", d, 1)
        self._param(rng, "keypoints.w_prime", config.heads * d, d)

    def _param(self, rng, name: str, rows: int, cols: int) -> None:
        self.params[name] = ad.parameter(_glorot(rng, rows, cols))

    def _zero(self, name: str, rows: int, cols: int) -> None:
        self.params[name] = ad.parameter(np.zeros((rows, cols)))

    def _unique_layers(self) -> int:
        if self.config.share_layers and self.config.layers > 1:
            return 2
        return self.config.layers

    def _layer_prefix(self, l: int) -> str:
        if self.config.share_layers and l > 0:
            return "iegmn.layer1."
        return f"iegmn.layer{l}."

    # -- building blocks ---------------------------------------------------

    def _linear(self, prefix: str, x: ad.Tensor) -> ad.Tensor:
        return ad.add(ad.matmul(self.params[prefix + ".W"], x), self.params[prefix + ".b"])

    def _mlp(self, prefix: str, x: ad.Tensor) -> ad.Tensor:
        hidden = ad.leaky_relu(self._linear(prefix + ".lin0", x), self.config.leaky_slope)
        return self._linear(prefix + ".lin1", hidden)

    def _node_features(self, g: ProteinGraph) -> ad.Tensor:
        emb = ad.take_columns(self.params["embed.table"], g.types)
        return ad.concat([emb, ad.constant(g.rho.T)], axis=0)

    def _initial_state(self, g: ProteinGraph, X: np.ndarray | None):
        coords = g.X if X is None else np.asarray(X, dtype=np.float64)
        if coords.shape != g.X.shape:
            raise ad.ShapeError(f"coordinate override shape {coords.shape}, expected {g.X.shape}")
        feats = self._node_features(g)
        h0 = self._linear("embed.project", feats)
        return ad.constant(coords), h0, feats

    def _intra_messages(self, prefix: str, Z: ad.Tensor, H: ad.Tensor, g: ProteinGraph):
        """Mean-aggregated edge messages and the gated coordinate increment."""
        n = g.n_nodes
        Hs = ad.take_columns(H, g.src)
        Hd = ad.take_columns(H, g.dst)
        Zs = ad.take_columns(Z, g.src)
        Zd = ad.take_columns(Z, g.dst)
        diff = ad.sub(Zd, Zs)
        sqd = ad.reduce_sum(ad.mul(diff, diff), axis=0, keepdims=True)
        radial = ad.exp(ad.scale(sqd, -1.0 / self.config.sigma_msg))
        m_edge = self._mlp(prefix + "phi_e",
                           ad.concat([Hd, Hs, radial, ad.constant(g.edge_feats)], axis=0))
        inv_deg = ad.constant(
            1.0 / np.maximum(np.bincount(g.dst, minlength=n), 1)[None, :]
        )
        m_node = ad.mul(ad.segment_sum_columns(m_edge, g.dst, n), inv_deg)
        gate = self._mlp(prefix + "phi_x", m_edge)
        shift = ad.segment_sum_columns(ad.mul(diff, gate), g.dst, n)
        if self.config.mean_coord_update:
            shift = ad.mul(shift, inv_deg)
        return m_node, shift

    def _cross_values(self, prefix: str, H_other: ad.Tensor, Z_other: ad.Tensor) -> ad.Tensor:
        """Per-node message content taken from the other graph.

        Coordinates are accepted and deliberately ignored: cross-graph
        traffic must stay rigid-motion-invariant. Tests monkeypatch this to
        confirm the equivariance checks catch a coordinate leak.
        """
        del Z_other
        return ad.matmul(self.params[prefix + "cross.W"], H_other)

    def _cross_messages(self, prefix: str, H_to: ad.Tensor, H_from: ad.Tensor,
                        Z_from: ad.Tensor) -> ad.Tensor:
        q = self._linear(prefix + "att_q", H_to)
        k = self._linear(prefix + "att_k", H_from)
        att = ad.softmax(ad.matmul(ad.transpose(q), k), axis=1)
        values = self._cross_values(prefix, H_from, Z_from)
        return ad.matmul(values, ad.transpose(att))

    def _layer(self, l: int, state1, state2, g1: ProteinGraph, g2: ProteinGraph):
        cfg = self.config
        prefix = self._layer_prefix(l)
        (Z1, H1, X1_0, F1), (Z2, H2, X2_0, F2) = state1, state2
        out = []
        cross_pairs = ((H1, H2, Z2), (H2, H1, Z1))
        intra = ((Z1, H1, X1_0, F1, g1), (Z2, H2, X2_0, F2, g2))
        for (Z, H, X0, F, g), (H_to, H_from, Z_from) in zip(intra, cross_pairs):
            m_node, shift = self._intra_messages(prefix, Z, H, g)
            mu = self._cross_messages(prefix, H_to, H_from, Z_from)
            z_new = ad.add(ad.add(ad.scale(X0, cfg.eta), ad.scale(Z, 1.0 - cfg.eta)), shift)
            h_mix = self._mlp(prefix + "phi_h", ad.concat([H, m_node, mu, F], axis=0))
            h_new = ad.add(ad.scale(H, 1.0 - cfg.beta), ad.scale(h_mix, cfg.beta))
            if cfg.normalize_h:
                h_new = ad.layer_norm(h_new, axis=0)
            out.append((z_new, h_new, X0, F))
        return out[0], out[1]

    def forward(self, g1: ProteinGraph, g2: ProteinGraph,
                X1: np.ndarray | None = None, X2: np.ndarray | None = None):
        """Run all layers; returns coordinate and feature embeddings (Z1, H1, Z2, H2).

        X1/X2 optionally replace the stored coordinates (the graphs' edge
        features are rigid-motion-invariant, so any rigidly moved copy of
        the same protein reuses its graph).
        """
        Z1, H1, F1 = self._initial_state(g1, X1)
        Z2, H2, F2 = self._initial_state(g2, X2)
        state1 = (Z1, H1, Z1, F1)
        state2 = (Z2, H2, Z2, F2)
        for l in range(self.config.layers):
            state1, state2 = self._layer(l, state1, state2, g1, g2)
        return state1[0], state1[1], state2[0], state2[1]

    def keypoints(self, Z: ad.Tensor, H: ad.Tensor, H_other: ad.Tensor):
        """K attention-weighted points (3 x K) plus the attention rows (K x n).

        Rows are convex weights over this protein's nodes; the query vector
        summarizing the other protein is the column mean of a shared linear
        map plus LeakyReLU.
        """
        d = self.config.hidden_dim
        summary = ad.reduce_mean(
            ad.leaky_relu(self._linear("keypoints.phi", H_other), self.config.leaky_slope),
            axis=1, keepdims=True,
        )
        per_head = ad.reshape(ad.matmul(self.params["keypoints.w_prime"], summary),
                              (self.config.heads, d))
        logits = ad.scale(ad.matmul(per_head, H), 1.0 / np.sqrt(d))
        attention = ad.softmax(logits, axis=1)
        return ad.matmul(Z, ad.transpose(attention)), attention

    # -- serialization -----------------------------------------------------

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(arrays)
        extra = set(arrays) - set(self.params)
        if missing or extra:
            raise ValueError(f"parameter name mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for name, value in arrays.items():
            current = self.params[name]
            if current.data.shape != value.shape:
                raise ValueError(f"{name}: shape {value.shape}, expected {current.data.shape}")
            current.data = np.asarray(value, dtype=np.float64, order="C").copy()


def check_pairwise_equivariance(model: DockingModel, g1: ProteinGraph, g2: ProteinGraph,
                                seed: int = 0, trials: int = 5) -> float:
    """Max relative deviation from the independent-motion contract.

    For random rigid motions (Q1, t1) and (Q2, t2) applied to the two inputs,
    coordinate outputs must move identically and feature outputs must not
    move at all. Deviations are scaled by the magnitude of the reference.
    """
    rng = np.random.default_rng(seed)
    base = model.forward(g1, g2)
    worst = 0.0
    for _ in range(trials):
        moves = []
        transformed = []
        for g in (g1, g2):
            q = _random_rotation(rng)
            t = rng.uniform(-30.0, 30.0, size=3)
            moves.append((q, t))
            transformed.append(build_graph(g.residues.transformed(q, t), g.k))
        out = model.forward(transformed[0], transformed[1])
        for idx in range(2):
            q, t = moves[idx]
            z_ref = q @ base[2 * idx].data + t[:, None]
            z_dev = np.max(np.abs(out[2 * idx].data - z_ref))
            h_dev = np.max(np.abs(out[2 * idx + 1].data - base[2 * idx + 1].data))
            scale_z = max(1.0, np.max(np.abs(z_ref)))
            scale_h = max(1.0, np.max(np.abs(base[2 * idx + 1].data)))
            worst = max(worst, z_dev / scale_z, h_dev / scale_h)
    return worst


def _random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.standard_normal(4)
    q /= np.linalg.norm(q)
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])
