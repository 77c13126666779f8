"""Rigid-motion invariant per-residue geometry features."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from prefopt.errors import DataValidationError, DomainError

N_ANGLE_FEATURES = 6
MISSING_DISTANCE = 999.0
_COLLINEAR_TOL = 1e-9


@dataclass(frozen=True)
class Features:
    """Feature rows plus the k-nearest-neighbour index sets they were built from.

    ``matrix`` columns: sin/cos of phi, psi, omega, then k ascending CA-CA
    distances. ``neighbors`` holds residue indices, -1 where padded.
    """

    matrix: np.ndarray
    neighbors: np.ndarray

    @property
    def k(self):
        return self.neighbors.shape[1]

    def __len__(self):
        return self.matrix.shape[0]


def dihedral(p0, p1, p2, p3):
    """Torsion angle in radians, or None when three consecutive atoms are collinear."""
    b0, b1, b2 = p1 - p0, p2 - p1, p3 - p2
    n1, n2 = np.cross(b0, b1), np.cross(b1, b2)
    nb1 = np.linalg.norm(b1)
    if (
        np.linalg.norm(n1) <= _COLLINEAR_TOL * np.linalg.norm(b0) * nb1
        or np.linalg.norm(n2) <= _COLLINEAR_TOL * nb1 * np.linalg.norm(b2)
    ):
        return None
    x = np.dot(n1, n2)
    y = np.dot(np.cross(n1, n2), b1) / nb1
    return float(np.arctan2(y, x))


def backbone_dihedrals(structure):
    """(phi, psi, omega) per residue in radians; None where undefined."""
    res = structure.residues
    n = len(res)
    out = []
    for i, r in enumerate(res):
        prev_ok = i > 0 and res[i - 1].chain_id == r.chain_id and res[i - 1].index == r.index - 1
        next_ok = i + 1 < n and res[i + 1].chain_id == r.chain_id and res[i + 1].index == r.index + 1
        phi = dihedral(res[i - 1].C, r.N, r.CA, r.C) if prev_ok else None
        psi = dihedral(r.N, r.CA, r.C, res[i + 1].N) if next_ok else None
        omega = dihedral(r.CA, r.C, res[i + 1].N, res[i + 1].CA) if next_ok else None
        out.append((phi, psi, omega))
    return out


def featurize(structure, k=8) -> Features:
    if k < 1:
        raise DomainError(f"featurize: k must be >= 1, got {k}")
    n = len(structure)
    if n < 2:
        raise DataValidationError(f"featurize: structure {structure.id!r} has fewer than 2 residues")

    angles = np.zeros((n, N_ANGLE_FEATURES))
    for i, torsions in enumerate(backbone_dihedrals(structure)):
        for j, t in enumerate(torsions):
            if t is not None:
                angles[i, 2 * j] = np.sin(t)
                angles[i, 2 * j + 1] = np.cos(t)

    ca = structure.atoms("CA")
    dist = np.linalg.norm(ca[:, None, :] - ca[None, :, :], axis=-1)
    np.fill_diagonal(dist, np.inf)
    order = np.argsort(dist, axis=1, kind="stable")
    m = min(k, n - 1)
    neighbors = np.full((n, k), -1, dtype=np.int64)
    neighbors[:, :m] = order[:, :m]
    distances = np.full((n, k), MISSING_DISTANCE)
    distances[:, :m] = np.take_along_axis(dist, order[:, :m], axis=1)
    return Features(np.concatenate([angles, distances], axis=1), neighbors)
