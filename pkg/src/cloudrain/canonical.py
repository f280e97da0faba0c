"""PCA canonical pose of a point cloud and its eigenvector sign ambiguity.

A cloud is centred on its centroid and rotated into the eigenbasis of its
covariance. Reflecting (or rotating) the input changes the result only by a
per-axis sign pattern, one of eight. No sign convention is imposed here;
downstream layers that see only squared coordinates absorb the ambiguity.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .errors import InvalidInputError
from .linalg import covariance, jacobi_eigen

SIGN_PATTERNS = tuple(np.array(s, dtype=np.float64) for s in itertools.product((1, -1), repeat=3))


@dataclass(frozen=True)
class CanonicalCloud:
    positions: np.ndarray  # (X - centroid) @ basis
    basis: np.ndarray
    eigenvalues: np.ndarray
    centroid: np.ndarray
    degenerate: bool
    labels: np.ndarray | None = None

    def __len__(self):
        return self.positions.shape[0]


@dataclass(frozen=True)
class SignVariant:
    signs: np.ndarray
    positions: np.ndarray


def canonicalize(cloud) -> CanonicalCloud:
    """Centre ``cloud`` and express it in its principal axes.

    Accepts a :class:`PointCloud` or an N x 3 array. Row order is preserved.
    Clouds with (near-)repeated covariance eigenvalues are returned with
    ``degenerate=True``; their pose is not unique.
    """
    if isinstance(cloud, PointCloud):
        pos, labels = cloud.positions, cloud.labels
    else:
        pos, labels = np.asarray(cloud, dtype=np.float64), None
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidInputError(f"expected N x 3 positions, got shape {pos.shape}")
    if pos.shape[0] == 0:
        raise InvalidInputError("cannot canonicalize an empty cloud")
    centroid = pos.mean(axis=0)
    basis = jacobi_eigen(covariance(pos))
    return CanonicalCloud(
        positions=(pos - centroid) @ basis.vectors,
        basis=basis.vectors,
        eigenvalues=basis.values,
        centroid=centroid,
        degenerate=basis.degenerate,
        labels=labels,
    )


def sign_variants(c: CanonicalCloud) -> list[SignVariant]:
    """All eight per-axis sign flips of the canonical positions.

    Ordered as a binary counter over (x, y, z) with x most significant, so the
    first entry is the identity pattern (1, 1, 1).
    """
    return [SignVariant(s, c.positions * s) for s in SIGN_PATTERNS]


def canonical_agreement(a, b) -> tuple[np.ndarray, float]:
    """Best sign pattern aligning ``a`` to ``b`` and the max-abs residual.

    Both arguments are canonical clouds (or raw N x 3 arrays) with the same
    points in the same row order. Ties resolve to the earliest pattern.
    """
    pa = a.positions if isinstance(a, CanonicalCloud) else np.asarray(a, dtype=np.float64)
    pb = b.positions if isinstance(b, CanonicalCloud) else np.asarray(b, dtype=np.float64)
    if pa.shape != pb.shape:
        raise InvalidInputError(f"shape mismatch: {pa.shape} vs {pb.shape}")
    best, best_res = SIGN_PATTERNS[0], np.inf
    for s in SIGN_PATTERNS:
        res = float(np.max(np.abs(pa * s - pb))) if pa.size else 0.0
        if res < best_res:
            best, best_res = s, res
    return best.copy(), best_res
