"""Small dense linear algebra for 3-D point clouds.

Everything here works in float64: the invariance checks elsewhere in the
package compare results at 1e-10 and single precision cannot hold that.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cloud import PointCloud
from .errors import InvalidInputError, NumericalError

_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))

JACOBI_TOL = 1e-14
JACOBI_MAX_SWEEPS = 50
DEGENERACY_RTOL = 1e-9


@dataclass(frozen=True)
class SymMatrix3:
    """Real symmetric 3x3 matrix stored as its upper triangle.

    ``entries`` holds (a00, a01, a02, a11, a12, a22).
    """

    entries: tuple[float, float, float, float, float, float]

    @classmethod
    def from_array(cls, a) -> SymMatrix3:
        """Build from a 3x3 array, reading only the upper triangle."""
        a = np.asarray(a, dtype=np.float64)
        if a.shape != (3, 3):
            raise InvalidInputError(f"expected a 3x3 matrix, got {a.shape}")
        return cls(tuple(float(a[i, j]) for i, j in _UPPER))

    def to_array(self) -> np.ndarray:
        out = np.empty((3, 3))
        for (i, j), v in zip(_UPPER, self.entries):
            out[i, j] = out[j, i] = v
        return out

    def __array__(self, dtype=None, copy=None):
        out = self.to_array()
        return out if dtype is None else out.astype(dtype)


@dataclass(frozen=True)
class EigenBasis:
    """Eigenvalues in descending order and the matching orthonormal columns."""

    values: np.ndarray
    vectors: np.ndarray
    degenerate: bool


def _positions(cloud) -> np.ndarray:
    if isinstance(cloud, PointCloud):
        return cloud.positions
    pos = np.asarray(cloud, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 3:
        raise InvalidInputError(f"expected N x 3 positions, got shape {pos.shape}")
    return pos


def covariance(cloud) -> SymMatrix3:
    """Population covariance (1/N normalisation) of the point positions."""
    pos = _positions(cloud)
    if pos.shape[0] == 0:
        raise InvalidInputError("covariance of an empty cloud")
    centered = pos - pos.mean(axis=0)
    return SymMatrix3.from_array(centered.T @ centered / pos.shape[0])


def is_degenerate(values, rtol: float = DEGENERACY_RTOL) -> bool:
    """True when any two eigenvalues coincide within ``rtol * max(1, |lambda_1|)``."""
    values = np.asarray(values, dtype=np.float64)
    tol = rtol * max(1.0, abs(values[0]))
    return bool(np.any(np.abs(np.diff(values)) <= tol))


def jacobi_eigen(m, tol: float = JACOBI_TOL, max_sweeps: int = JACOBI_MAX_SWEEPS) -> EigenBasis:
    """Cyclic Jacobi eigendecomposition of a symmetric 3x3 matrix.

    Parameters
    ----------
    m : SymMatrix3 or array_like
        Symmetric input; for an array only the upper triangle is read.
    tol : float
        Stop once the off-diagonal Frobenius norm is ``<= tol * ||m||_F``.
    max_sweeps : int
        Give up with :class:`NumericalError` after this many sweeps.

    Returns
    -------
    EigenBasis
        Eigenvalues sorted descending. Eigenvector signs are whatever the
        rotations produce; no sign convention is imposed.
    """
    if not isinstance(m, SymMatrix3):
        m = SymMatrix3.from_array(m)
    a = m.to_array()
    if not np.all(np.isfinite(a)):
        raise NumericalError("matrix has non-finite entries")
    v = np.eye(3)
    threshold = tol * np.linalg.norm(a)

    def off_norm(x):
        return math.sqrt(2.0 * (x[0, 1] ** 2 + x[0, 2] ** 2 + x[1, 2] ** 2))

    sweeps = 0
    while off_norm(a) > threshold:
        if sweeps == max_sweeps:
            raise NumericalError(f"Jacobi did not converge in {max_sweeps} sweeps")
        for p, q in ((0, 1), (0, 2), (1, 2)):
            apq = float(a[p, q])
            if apq == 0.0:
                continue
            theta = (float(a[q, q]) - float(a[p, p])) / (2.0 * apq)
            if abs(theta) > 1e150:
                t = 0.5 / theta  # theta**2 would overflow; t ~ 1/(2 theta)
            else:
                t = math.copysign(1.0, theta) / (abs(theta) + math.sqrt(theta * theta + 1.0))
            c = 1.0 / math.sqrt(t * t + 1.0)
            s = t * c
            rot = np.eye(3)
            rot[p, p] = rot[q, q] = c
            rot[p, q] = s
            rot[q, p] = -s
            a = rot.T @ a @ rot
            # the rotation zeroes (p, q) analytically; pin it and keep symmetry
            a[p, q] = a[q, p] = 0.0
            v = v @ rot
        sweeps += 1

    values = np.diag(a).copy()
    order = np.argsort(-values, kind="stable")
    values = values[order]
    vectors = v[:, order]
    values.setflags(write=False)
    vectors.setflags(write=False)
    return EigenBasis(values, vectors, is_degenerate(values))


def householder(normal) -> np.ndarray:
    """Reflection ``I - 2 n n^T`` across the plane through 0 with normal ``n``.

    The normal is renormalised; a zero vector raises InvalidInputError.
    """
    n = np.asarray(normal, dtype=np.float64).reshape(-1)
    if n.shape != (3,):
        raise InvalidInputError("normal must be a 3-vector")
    norm = np.linalg.norm(n)
    if not np.isfinite(norm) or norm == 0.0:
        raise InvalidInputError("reflection normal must be non-zero and finite")
    n = n / norm
    return np.eye(3) - 2.0 * np.outer(n, n)


def axis_flip(axes: str) -> np.ndarray:
    """Diagonal sign-flip matrix negating the named axes, e.g. ``"z"`` or ``"xyz"``."""
    if not axes or set(axes) - set("xyz") or len(set(axes)) != len(axes):
        raise InvalidInputError(f"bad axis string {axes!r}")
    d = np.ones(3)
    for ax in axes:
        d["xyz".index(ax)] = -1.0
    return np.diag(d)


def random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    """A direction drawn uniformly on the unit sphere."""
    while True:
        v = rng.standard_normal(3)
        norm = np.linalg.norm(v)
        if norm > 1e-12:
            return v / norm


def apply_transform(cloud: PointCloud, m) -> PointCloud:
    """Return a copy with positions replaced by ``X @ m.T``; features and labels are kept."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3):
        raise InvalidInputError(f"transform must be 3x3, got {m.shape}")
    return cloud.with_positions(cloud.positions @ m.T)
