"""PDB ingestion and CA-trace output.

Only the fixed-column subset of the format is read: ATOM/HETATM records,
columns 13-16 atom name, 17 altloc, 18-20 residue name, 22 chain id,
23-26 residue sequence number, 27 insertion code, 31-54 coordinates.
A residue is kept when all three backbone atoms (N, CA, C) are present;
the first occurrence wins for duplicated atoms (altloc conformers).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

AMINO_ACIDS = (
    "ALA", "ARG", "ASN", "ASP", "CYS", "GLN", "GLU", "GLY", "HIS", "ILE",
    "LEU", "LYS", "MET", "PHE", "PRO", "SER", "THR", "TRP", "TYR", "VAL",
)
UNK = "UNK"
RESIDUE_TYPES = AMINO_ACIDS + (UNK,)
TYPE_INDEX = {name: i for i, name in enumerate(RESIDUE_TYPES)}


class PdbParseError(ValueError):
    pass


@dataclass
class ResidueSet:
    """Backbone coordinates and identity of every complete residue, in file order.

    Coordinate arrays are 3 x n (Angstroms). ``seq_ids`` keeps the residue
    number and insertion code exactly as written; they are opaque labels.
    """

    ca: np.ndarray
    n_atom: np.ndarray
    c_atom: np.ndarray
    types: np.ndarray
    names: list[str]
    chains: list[str]
    seq_ids: list[str]
    icodes: list[str]
    skipped: int = 0

    def __len__(self) -> int:
        return self.ca.shape[1]

    def transformed(self, rotation: np.ndarray, translation: np.ndarray) -> "ResidueSet":
        """Rigidly move every backbone atom: x -> R x + t."""
        rotation = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64).reshape(3, 1)
        return ResidueSet(
            ca=rotation @ self.ca + t,
            n_atom=rotation @ self.n_atom + t,
            c_atom=rotation @ self.c_atom + t,
            types=self.types.copy(),
            names=list(self.names),
            chains=list(self.chains),
            seq_ids=list(self.seq_ids),
            icodes=list(self.icodes),
            skipped=self.skipped,
        )

    def with_ca(self, ca: np.ndarray) -> "ResidueSet":
        """Same residues with replaced CA coordinates (N/C moved by per-residue offset)."""
        ca = np.asarray(ca, dtype=np.float64)
        if ca.shape != self.ca.shape:
            raise ValueError(f"with_ca: shape {ca.shape}, expected {self.ca.shape}")
        shift = ca - self.ca
        return ResidueSet(
            ca=ca,
            n_atom=self.n_atom + shift,
            c_atom=self.c_atom + shift,
            types=self.types.copy(),
            names=list(self.names),
            chains=list(self.chains),
            seq_ids=list(self.seq_ids),
            icodes=list(self.icodes),
            skipped=self.skipped,
        )


@dataclass
class _ResidueAtoms:
    name: str
    chain: str
    seq: str
    icode: str
    atoms: dict = field(default_factory=dict)


def _parse_coord(line: str, lo: int, hi: int, lineno: int) -> float:
    text = line[lo:hi].strip()
    try:
        return float(text)
    except ValueError:
        raise PdbParseError(f"line {lineno}: malformed coordinate field {text!r}") from None


def parse_pdb(text: str, chain_filter: set[str] | None = None) -> ResidueSet:
    """Parse PDB text into a ResidueSet.

    chain_filter, when given, keeps only records whose chain id is in the set.
    Residues missing any of N/CA/C are dropped and counted in ``skipped``.
    Raises PdbParseError when no complete residue remains.
    """
    residues: dict[tuple[str, str, str], _ResidueAtoms] = {}
    order: list[tuple[str, str, str]] = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        record = line[:6]
        if record not in ("ATOM  ", "HETATM"):
            continue
        if len(line) < 54:
            raise PdbParseError(f"line {lineno}: record too short for coordinates")
        chain = line[21]
        if chain_filter is not None and chain not in chain_filter:
            continue
        atom = line[12:16].strip()
        if atom not in ("N", "CA", "C"):
            continue
        key = (chain, line[22:26].strip(), line[26] if len(line) > 26 else " ")
        entry = residues.get(key)
        if entry is None:
            entry = _ResidueAtoms(
                name=line[17:20].strip(), chain=key[0], seq=key[1], icode=key[2]
            )
            residues[key] = entry
            order.append(key)
        if atom in entry.atoms:
            continue  # first occurrence wins (altloc rule)
        x = _parse_coord(line, 30, 38, lineno)
        y = _parse_coord(line, 38, 46, lineno)
        z = _parse_coord(line, 46, 54, lineno)
        entry.atoms[atom] = np.array([x, y, z])

    kept = []
    skipped = 0
    for key in order:
        entry = residues[key]
        if all(a in entry.atoms for a in ("N", "CA", "C")):
            kept.append(entry)
        else:
            skipped += 1
    if skipped:
        log.warning("skipped %d residue(s) missing backbone atoms", skipped)
    if not kept:
        raise PdbParseError(f"zero valid residues ({skipped} skipped as incomplete)")

    n = len(kept)
    ca = np.empty((3, n))
    n_atom = np.empty((3, n))
    c_atom = np.empty((3, n))
    types = np.empty(n, dtype=np.int64)
    for i, entry in enumerate(kept):
        ca[:, i] = entry.atoms["CA"]
        n_atom[:, i] = entry.atoms["N"]
        c_atom[:, i] = entry.atoms["C"]
        types[i] = TYPE_INDEX.get(entry.name, TYPE_INDEX[UNK])
    return ResidueSet(
        ca=ca,
        n_atom=n_atom,
        c_atom=c_atom,
        types=types,
        names=[e.name for e in kept],
        chains=[e.chain for e in kept],
        seq_ids=[e.seq for e in kept],
        icodes=[e.icode for e in kept],
        skipped=skipped,
    )


def parse_pdb_file(path: str, chain_filter: set[str] | None = None) -> ResidueSet:
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        return parse_pdb(fh.read(), chain_filter)


def _atom_line(serial: int, atom: str, name: str, chain: str, seq: str,
               icode: str, xyz: np.ndarray) -> str:
    element = atom.strip()[0]
    return (
        f"ATOM  {serial:5d} {atom:<4s} {name:>3s} {chain:1s}{seq:>4s}{icode:1s}   "
        f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}  1.00  0.00          {element:>2s}"
    )


def format_ca_pdb(rs: ResidueSet, full_backbone: bool = False) -> str:
    """Render a ResidueSet as PDB text, CA records only by default.

    full_backbone additionally writes the N and C records; used by the
    synthetic dataset writer so the files round-trip through parse_pdb.
    """
    lines = []
    serial = 1
    for i in range(len(rs)):
        args = (rs.names[i], rs.chains[i], rs.seq_ids[i], rs.icodes[i])
        if full_backbone:
            lines.append(_atom_line(serial, " N", *args, rs.n_atom[:, i]))
            serial += 1
        lines.append(_atom_line(serial, " CA", *args, rs.ca[:, i]))
        serial += 1
        if full_backbone:
            lines.append(_atom_line(serial, " C", *args, rs.c_atom[:, i]))
            serial += 1
    lines.append("END")
    return "\n".join(lines) + "\n"


def transform_atom_records(text: str, rotation: np.ndarray, translation: np.ndarray) -> str:
    """Rewrite coordinates of every ATOM/HETATM record by x -> R x + t.

    All other columns, and non-atom lines, pass through byte for byte.
    """
    rotation = np.asarray(rotation, dtype=np.float64)
    t = np.asarray(translation, dtype=np.float64).reshape(3)
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line[:6] in ("ATOM  ", "HETATM") and len(line) >= 54:
            xyz = np.array([
                _parse_coord(line, 30, 38, lineno),
                _parse_coord(line, 38, 46, lineno),
                _parse_coord(line, 46, 54, lineno),
            ])
            moved = rotation @ xyz + t
            coords = f"{moved[0]:8.3f}{moved[1]:8.3f}{moved[2]:8.3f}"
            line = line[:30] + coords + line[54:]
        out.append(line)
    return "\n".join(out) + "\n"


def local_frames(rs: ResidueSet) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-residue orthonormal basis (n, u, v), each 3 x n.

    u is the unit CA->N vector, t the unit CA->C vector, n the unit normal
    u x t, and v = n x u. Raises ValueError naming the residue when the
    backbone is collinear (||u x t|| <= 1e-6 after normalization).
    """
    u = rs.n_atom - rs.ca
    t = rs.c_atom - rs.ca
    u_norm = np.linalg.norm(u, axis=0)
    t_norm = np.linalg.norm(t, axis=0)
    bad = np.where((u_norm < 1e-12) | (t_norm < 1e-12))[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"degenerate backbone at residue {rs.chains[i]}:{rs.seq_ids[i]}")
    u = u / u_norm
    t = t / t_norm
    n = np.cross(u, t, axis=0)
    n_norm = np.linalg.norm(n, axis=0)
    bad = np.where(n_norm <= 1e-6)[0]
    if bad.size:
        i = int(bad[0])
        raise ValueError(f"collinear backbone at residue {rs.chains[i]}:{rs.seq_ids[i]}")
    n = n / n_norm
    v = np.cross(n, u, axis=0)
    return n, u, v
