"""Backbone structures, their JSON form, and an internal-coordinate builder."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from prefopt.errors import DataValidationError

# Engh & Huber backbone geometry (Angstrom, degrees).
BOND_N_CA = 1.458
BOND_CA_C = 1.525
BOND_C_N = 1.329
ANGLE_N_CA_C = 111.2
ANGLE_CA_C_N = 116.2
ANGLE_C_N_CA = 121.7


@dataclass(frozen=True)
class Residue:
    chain_id: str
    index: int
    N: np.ndarray
    CA: np.ndarray
    C: np.ndarray
    aa: str = "X"


@dataclass(frozen=True)
class BackboneStructure:
    """Per-residue N/CA/C coordinates grouped by chain.

    Chains are contiguous and keep their declared order, which is also the
    order of the token stream scored by the model.
    """

    id: str
    residues: tuple

    def __post_init__(self):
        object.__setattr__(self, "residues", tuple(self.residues))
        seen_chains = []
        prev = None
        for r in self.residues:
            if prev is None or r.chain_id != prev.chain_id:
                if r.chain_id in seen_chains:
                    raise DataValidationError(f"{self.id}: chain {r.chain_id!r} is not contiguous")
                seen_chains.append(r.chain_id)
            elif r.index <= prev.index:
                raise DataValidationError(
                    f"{self.id}: residue indices must strictly increase within chain {r.chain_id!r} "
                    f"({prev.index} then {r.index})"
                )
            atoms = (r.N, r.CA, r.C)
            for a in atoms:
                if np.shape(a) != (3,) or not np.all(np.isfinite(a)):
                    raise DataValidationError(f"{self.id}: bad coordinates at {r.chain_id}{r.index}")
            if np.array_equal(r.N, r.CA) or np.array_equal(r.CA, r.C) or np.array_equal(r.N, r.C):
                raise DataValidationError(f"{self.id}: coincident atoms at {r.chain_id}{r.index}")
            prev = r

    def __len__(self):
        return len(self.residues)

    @property
    def chain_ids(self):
        out = []
        for r in self.residues:
            if not out or out[-1] != r.chain_id:
                out.append(r.chain_id)
        return out

    @property
    def chain_lengths(self):
        return [sum(1 for r in self.residues if r.chain_id == c) for c in self.chain_ids]

    @property
    def sequence(self):
        return "".join(r.aa for r in self.residues)

    def atoms(self, name):
        return np.array([getattr(r, name) for r in self.residues], dtype=np.float64)

    def transformed(self, rotation, translation):
        rot = np.asarray(rotation, dtype=np.float64)
        t = np.asarray(translation, dtype=np.float64)
        moved = [
            Residue(r.chain_id, r.index, rot @ r.N + t, rot @ r.CA + t, rot @ r.C + t, r.aa)
            for r in self.residues
        ]
        return BackboneStructure(self.id, moved)

    def position_of(self, chain_id, index):
        for pos, r in enumerate(self.residues):
            if r.chain_id == chain_id and r.index == index:
                return pos
        raise KeyError((chain_id, index))


def structure_from_dict(doc) -> BackboneStructure:
    try:
        residues = []
        for chain in doc["chains"]:
            cid = str(chain["chain_id"])
            for r in chain["residues"]:
                residues.append(
                    Residue(
                        cid,
                        int(r["index"]),
                        np.asarray(r["N"], dtype=np.float64),
                        np.asarray(r["CA"], dtype=np.float64),
                        np.asarray(r["C"], dtype=np.float64),
                        str(r.get("aa", "X")),
                    )
                )
        return BackboneStructure(str(doc["id"]), residues)
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataValidationError):
            raise
        raise DataValidationError(f"malformed structure document: {exc!r}") from exc


def structure_to_dict(structure: BackboneStructure):
    chains = []
    for r in structure.residues:
        if not chains or chains[-1]["chain_id"] != r.chain_id:
            chains.append({"chain_id": r.chain_id, "residues": []})
        chains[-1]["residues"].append(
            {
                "index": r.index,
                "N": [float(v) for v in r.N],
                "CA": [float(v) for v in r.CA],
                "C": [float(v) for v in r.C],
                "aa": r.aa,
            }
        )
    return {"id": structure.id, "chains": chains}


def load_structure(path) -> BackboneStructure:
    with open(path) as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DataValidationError(f"{path}: invalid JSON ({exc})") from exc
    return structure_from_dict(doc)


def save_structure(structure: BackboneStructure, path):
    Path(path).write_text(json.dumps(structure_to_dict(structure), indent=1) + "\n")


def _place(a, b, c, bond, angle, torsion):
    """Position atom d so that |cd| = bond, angle(b,c,d) = angle, dihedral(a,b,c,d) = torsion."""
    bc = c - b
    bc /= np.linalg.norm(bc)
    n = np.cross(b - a, bc)
    n /= np.linalg.norm(n)
    m = np.stack([bc, np.cross(n, bc), n], axis=1)
    ang, tor = np.radians(angle), np.radians(torsion)
    d = np.array([-bond * np.cos(ang), bond * np.sin(ang) * np.cos(tor), bond * np.sin(ang) * np.sin(tor)])
    return c + m @ d


def build_backbone(phi, psi, omega=None):
    """N/CA/C coordinates for one chain from backbone torsions in degrees.

    ``phi[0]`` and the last ``psi``/``omega`` entries are unused.
    Returns an array of shape (n, 3, 3) ordered N, CA, C.
    """
    phi = np.asarray(phi, dtype=np.float64)
    psi = np.asarray(psi, dtype=np.float64)
    n = len(phi)
    omega = np.full(n, 180.0) if omega is None else np.asarray(omega, dtype=np.float64)
    coords = np.zeros((n, 3, 3))
    N0 = np.zeros(3)
    CA0 = np.array([BOND_N_CA, 0.0, 0.0])
    ang = np.radians(ANGLE_N_CA_C)
    C0 = CA0 + BOND_CA_C * np.array([-np.cos(ang), np.sin(ang), 0.0])
    coords[0] = (N0, CA0, C0)
    for i in range(n - 1):
        N_i, CA_i, C_i = coords[i]
        N_next = _place(N_i, CA_i, C_i, BOND_C_N, ANGLE_CA_C_N, psi[i])
        CA_next = _place(CA_i, C_i, N_next, BOND_N_CA, ANGLE_C_N_CA, omega[i])
        C_next = _place(C_i, N_next, CA_next, BOND_CA_C, ANGLE_N_CA_C, phi[i + 1])
        coords[i + 1] = (N_next, CA_next, C_next)
    return coords


def chain_residues(chain_id, coords, sequence, start_index=1):
    return [
        Residue(chain_id, start_index + i, coords[i, 0].copy(), coords[i, 1].copy(), coords[i, 2].copy(), aa)
        for i, aa in enumerate(sequence)
    ]
