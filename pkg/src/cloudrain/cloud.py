"""The labelled point-cloud container used by every other module."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True)
class PointCloud:
    """N points with xyz positions, optional extra feature columns and labels.

    Arrays are copied to float64 / int64 on construction and marked
    read-only, so a cloud can be shared freely.
    """

    positions: np.ndarray
    features: np.ndarray = field(default=None)
    labels: np.ndarray | None = None

    def __post_init__(self):
        pos = np.array(self.positions, dtype=np.float64)
        if pos.ndim != 2 or pos.shape[1] != 3:
            raise InvalidInputError(f"positions must be N x 3, got shape {pos.shape}")
        n = pos.shape[0]
        if self.features is None:
            feats = np.zeros((n, 0))
        else:
            feats = np.array(self.features, dtype=np.float64)
            if feats.ndim == 1:
                feats = feats[:, None]
            if feats.ndim != 2 or feats.shape[0] != n:
                raise InvalidInputError("features must have one row per point")
        labels = None
        if self.labels is not None:
            labels = np.array(self.labels)
            if labels.shape != (n,):
                raise InvalidInputError("labels must have one entry per point")
            if labels.size and not np.issubdtype(labels.dtype, np.integer):
                if not np.all(labels == np.round(labels)):
                    raise InvalidInputError("labels must be integers")
            labels = labels.astype(np.int64)
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(feats))):
            raise InvalidInputError("point cloud contains non-finite values")
        for arr in (pos, feats, labels):
            if arr is not None:
                arr.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.positions.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def data(self) -> np.ndarray:
        """Positions and features side by side, N x (3 + c)."""
        return np.hstack([self.positions, self.features])

    def with_positions(self, positions: np.ndarray) -> PointCloud:
        return PointCloud(positions, self.features, self.labels)

    def take(self, index) -> PointCloud:
        index = np.asarray(index)
        labels = None if self.labels is None else self.labels[index]
        return PointCloud(self.positions[index], self.features[index], labels)
