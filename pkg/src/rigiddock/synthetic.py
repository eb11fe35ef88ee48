"""Synthetic docking pairs with known ground-truth rigid motions.

Each pair is a bound complex built from two random point blobs joined at a
constructed interface. The receptor grows an irregular five-point landing
pad at its most exposed spot; the ligand's five interface residues sit
directly above the pad points, just inside the contact cutoff, while every
other cross-protein distance stays above a clearance floor (so the steric
penalty is numerically zero). Interface residues carry a fixed sequence of
marker residue types on both sides, the way real binding sites carry a
recognizable composition: the docking site and pose are functions of the
structures alone, so docking these pairs is learnable rather than a
memorization exercise. The stored ligand file is the bound pose moved by a
random rigid motion whose inverse is saved as the answer.

Layout under the output directory::

    pairs/<pair_id>/ligand.pdb      backbone of the moved (input) ligand
    pairs/<pair_id>/receptor.pdb    backbone of the receptor (bound frame)
    pairs/<pair_id>/complex.json    rigid motion: bound = R @ input + t
    splits.json                     {"train": [...], "val": [...], "test": [...]}

Generation is deterministic: the same seed reproduces every byte.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .docking import RigidTransform
from .losses import POCKET_TAU, intersection_loss, pocket_points
from .model import _random_rotation
from .pdbio import RESIDUE_TYPES, TYPE_INDEX, ResidueSet, format_ca_pdb, parse_pdb_file

MIN_SEPARATION = 3.5      # closest allowed pair inside one protein
CLEARANCE = 7.25          # floor on every ligand-to-receptor distance
CONTACT_RING = 5          # constructed contacts per pair
MARKER_TYPES = tuple(TYPE_INDEX[name] for name in ("TRP", "TYR", "PHE", "HIS", "MET"))
MAX_PAIR_ATTEMPTS = 1000
_BLOB_RADIUS_COEFF = 2.7


class GenerationError(RuntimeError):
    """Raised when a valid pair cannot be constructed."""


@dataclass
class DockingPair:
    pair_id: str
    ligand: ResidueSet     # input pose (moved away from the bound frame)
    receptor: ResidueSet   # bound frame
    truth: RigidTransform  # maps ligand input coordinates onto the bound pose

    def bound_ligand(self) -> np.ndarray:
        return self.truth.apply(self.ligand.ca)


def _blob(rng: np.random.Generator, n: int, center: np.ndarray,
          accept=None) -> np.ndarray:
    """Random points with pairwise separation >= MIN_SEPARATION."""
    radius = _BLOB_RADIUS_COEFF * n ** (1.0 / 3.0) + 1.5
    points: list[np.ndarray] = []
    for _ in range(n):
        for _ in range(400):
            cand = center + rng.uniform(-radius, radius, size=3)
            if np.linalg.norm(cand - center) > radius:
                continue
            if accept is not None and not accept(cand):
                continue
            if points and np.min(np.linalg.norm(np.array(points) - cand, axis=1)) < MIN_SEPARATION:
                continue
            points.append(cand)
            break
        else:
            raise GenerationError(f"could not place point {len(points) + 1} of {n}")
    return np.array(points).T


def _tangent_basis(direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    ref = np.array([1.0, 0.0, 0.0])
    if abs(direction @ ref) > 0.9:
        ref = np.array([0.0, 1.0, 0.0])
    e1 = np.cross(direction, ref)
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(direction, e1)


def _landing_pad(rng: np.random.Generator, receptor: np.ndarray,
                 anchor: np.ndarray, direction: np.ndarray) -> np.ndarray:
    """Four extra receptor points ringing the anchor at its exposure plane.

    Radii and angles are jittered so the pad pentagon is irregular: the
    matching ligand ring then admits exactly one alignment, making the
    bound orientation recoverable from the geometry.
    """
    e1, e2 = _tangent_basis(direction)
    pad = []
    phase = rng.uniform(0.0, 2.0 * np.pi)
    for j in range(CONTACT_RING - 1):
        for _ in range(100):
            angle = phase + 2.0 * np.pi * (j + 1) / CONTACT_RING + rng.uniform(-0.35, 0.35)
            radius = rng.uniform(3.8, 5.5)
            dip = rng.uniform(-0.4, 0.0)
            cand = anchor + radius * (np.cos(angle) * e1 + np.sin(angle) * e2) + dip * direction
            others = np.concatenate([receptor, np.array(pad).T], axis=1) if pad else receptor
            if np.min(np.linalg.norm(others - cand[:, None], axis=0)) < MIN_SEPARATION:
                continue
            flat = np.array(pad + [anchor])
            tang = flat - cand
            tang -= np.outer(tang @ direction, direction)
            if np.min(np.linalg.norm(tang, axis=1)) < 3.6:
                continue
            pad.append(cand)
            break
        else:
            raise GenerationError("no room for a landing pad point")
    return np.array(pad).T


def _bound_complex(rng: np.random.Generator, n_lig: int, n_rec: int):
    """One attempt at a bound geometry; caller verifies and may retry.

    Returns bound ligand and receptor coordinates; the first CONTACT_RING
    columns on each side are the matched interface residues, in order.
    """
    receptor = _blob(rng, n_rec - (CONTACT_RING - 1), np.zeros(3))
    direction = rng.standard_normal(3)
    direction /= np.linalg.norm(direction)
    heights = direction @ receptor
    anchor = receptor[:, int(np.argmax(heights))]
    pad = _landing_pad(rng, receptor, anchor, direction)
    pad = np.concatenate([anchor[:, None], pad], axis=1)
    top = (direction @ pad).max()
    keep = np.ones(receptor.shape[1], dtype=bool)
    keep[int(np.argmax(heights))] = False
    receptor = np.concatenate([pad, receptor[:, keep]], axis=1)

    # interface ring: each point floats just above its pad partner
    ring = pad + np.outer(direction, top - direction @ pad + CLEARANCE
                          + rng.uniform(0.0, 0.2, size=CONTACT_RING))

    plane = top + CLEARANCE
    lig_center = anchor + (CLEARANCE + _BLOB_RADIUS_COEFF * n_lig ** (1.0 / 3.0) + 2.0) * direction
    ring_cols = [ring[:, j] for j in range(ring.shape[1])]

    def accept(cand: np.ndarray) -> bool:
        if cand @ direction < plane:
            return False
        return np.min(np.linalg.norm(np.array(ring_cols) - cand, axis=1)) >= MIN_SEPARATION

    rest = _blob(rng, n_lig - CONTACT_RING, lig_center, accept=accept)
    ligand = np.concatenate([ring, rest], axis=1)
    return ligand, receptor


def _verify(ligand: np.ndarray, receptor: np.ndarray) -> bool:
    diff = ligand[:, :, None] - receptor[:, None, :]
    d = np.sqrt(np.sum(diff * diff, axis=0))
    if d.min() < 7.2:
        return False
    if np.count_nonzero(d < POCKET_TAU) < CONTACT_RING:
        return False
    try:
        pocket_points(ligand, receptor)
    except Exception:
        return False
    return intersection_loss(ligand, receptor).item() <= 0.1


def _interface_types(rng: np.random.Generator, n: int) -> np.ndarray:
    """Marker types on the first ring positions, background types elsewhere."""
    background = np.array([t for t in range(20) if t not in MARKER_TYPES])
    types = rng.choice(background, size=n)
    types[:CONTACT_RING] = MARKER_TYPES
    return types.astype(np.int64)


def _residue_set(rng: np.random.Generator, ca: np.ndarray, types: np.ndarray,
                 chain: str) -> ResidueSet:
    """Wrap CA positions with randomly oriented backbone frames."""
    n = ca.shape[1]
    e1 = rng.standard_normal((3, n))
    e1 /= np.linalg.norm(e1, axis=0)
    raw = rng.standard_normal((3, n))
    raw -= e1 * np.sum(raw * e1, axis=0)
    raw /= np.linalg.norm(raw, axis=0)
    # place C at 110 degrees from N around each CA
    e2 = np.cos(np.deg2rad(110.0)) * e1 + np.sin(np.deg2rad(110.0)) * raw
    return ResidueSet(
        ca=ca,
        n_atom=ca + 1.46 * e1,
        c_atom=ca + 1.52 * e2,
        types=types,
        names=[RESIDUE_TYPES[t] for t in types],
        chains=[chain] * n,
        seq_ids=[str(i) for i in range(1, n + 1)],
        icodes=[" "] * n,
    )


def generate_pair(rng: np.random.Generator, pair_id: str,
                  min_residues: int = 30, max_residues: int = 80) -> DockingPair:
    """Build one verified pair; deterministic for a given generator state."""
    n_lig = int(rng.integers(min_residues, max_residues + 1))
    n_rec = int(rng.integers(min_residues, max_residues + 1))
    for _ in range(MAX_PAIR_ATTEMPTS):
        try:
            lig_ca, rec_ca = _bound_complex(rng, n_lig, n_rec)
        except GenerationError:
            continue
        if _verify(lig_ca, rec_ca):
            break
    else:
        raise GenerationError(
            f"{pair_id}: no valid geometry in {MAX_PAIR_ATTEMPTS} attempts")

    bound_ligand = _residue_set(rng, lig_ca, _interface_types(rng, n_lig), "A")
    receptor = _residue_set(rng, rec_ca, _interface_types(rng, n_rec), "B")
    move = RigidTransform(_random_rotation(rng), rng.uniform(-30.0, 30.0, size=3))
    return DockingPair(
        pair_id=pair_id,
        ligand=bound_ligand.transformed(move.R, move.t),
        receptor=receptor,
        truth=move.inverse(),
    )


def write_pair(pair: DockingPair, root: str) -> str:
    pair_dir = os.path.join(root, "pairs", pair.pair_id)
    os.makedirs(pair_dir, exist_ok=True)
    with open(os.path.join(pair_dir, "ligand.pdb"), "w") as fh:
        fh.write(format_ca_pdb(pair.ligand, full_backbone=True))
    with open(os.path.join(pair_dir, "receptor.pdb"), "w") as fh:
        fh.write(format_ca_pdb(pair.receptor, full_backbone=True))
    with open(os.path.join(pair_dir, "complex.json"), "w") as fh:
        fh.write(pair.truth.to_json())
        fh.write("\n")
    return pair_dir


def generate_dataset(root: str, n_pairs: int, seed: int = 0,
                     val_fraction: float = 0.15, test_fraction: float = 0.15,
                     min_residues: int = 30, max_residues: int = 80) -> list[str]:
    """Write ``n_pairs`` pairs plus a split file; returns the pair ids."""
    if n_pairs < 1:
        raise ValueError("n_pairs must be >= 1")
    rng = np.random.default_rng(seed)
    ids = []
    for i in range(n_pairs):
        pair = generate_pair(rng, f"pair{i:04d}", min_residues, max_residues)
        write_pair(pair, root)
        ids.append(pair.pair_id)
    n_val = int(round(n_pairs * val_fraction))
    n_test = int(round(n_pairs * test_fraction))
    n_train = n_pairs - n_val - n_test
    if n_train < 1:
        raise ValueError("split fractions leave no training pairs")
    splits = {
        "train": ids[:n_train],
        "val": ids[n_train:n_train + n_val],
        "test": ids[n_train + n_val:],
    }
    with open(os.path.join(root, "splits.json"), "w") as fh:
        json.dump(splits, fh, indent=2)
        fh.write("\n")
    return ids


def load_pair(pair_dir: str) -> DockingPair:
    ligand = parse_pdb_file(os.path.join(pair_dir, "ligand.pdb"))
    receptor = parse_pdb_file(os.path.join(pair_dir, "receptor.pdb"))
    with open(os.path.join(pair_dir, "complex.json")) as fh:
        truth = RigidTransform.from_json(fh.read())
    return DockingPair(
        pair_id=os.path.basename(os.path.normpath(pair_dir)),
        ligand=ligand, receptor=receptor, truth=truth,
    )


def load_split(root: str, split: str) -> list[DockingPair]:
    with open(os.path.join(root, "splits.json")) as fh:
        splits = json.load(fh)
    if split not in splits:
        raise ValueError(f"unknown split {split!r}; have {sorted(splits)}")
    return [load_pair(os.path.join(root, "pairs", pid)) for pid in splits[split]]
