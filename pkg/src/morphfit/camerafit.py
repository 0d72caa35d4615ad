"""Affine camera estimation from 2D-3D correspondences and point projection.

The estimator is the affine Gold Standard algorithm: both point sets are
isotropically normalised, each image row of the camera is solved by linear
least squares, and the normalisation is undone. For an affine camera the
linear solution already minimises the geometric reprojection error, so no
iterative refinement follows.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateError, ValidationError

AFFINE_LAST_ROW = np.array([0.0, 0.0, 0.0, 1.0])


@dataclass(frozen=True, eq=False)
class CameraMatrix:
    matrix: np.ndarray

    def __post_init__(self):
        P = np.array(self.matrix, dtype=float)
        if P.shape == (2, 4):
            P = np.vstack([P, AFFINE_LAST_ROW])
        if P.shape != (3, 4):
            raise ValidationError(f"camera must be 3x4, got {P.shape}")
        if not np.all(np.isfinite(P)):
            raise ValidationError("camera has non-finite entries")
        if not np.array_equal(P[2], AFFINE_LAST_ROW):
            raise ValidationError("affine camera third row must be exactly [0, 0, 0, 1]")
        P.setflags(write=False)
        object.__setattr__(self, "matrix", P)

    kind = "affine"

    @property
    def linear(self):
        """The 2x3 block acting on 3D coordinates."""
        return self.matrix[:2, :3]

    @property
    def translation(self):
        return self.matrix[:2, 3]

    def project(self, points3d):
        return project(self, points3d)


def project(camera, points3d):
    """Project one ``(3,)`` point or an ``(m, 3)`` array to pixels.

    Homogeneous product followed by division by the third coordinate, which
    is identically 1 for the affine camera.
    """
    X = np.asarray(points3d, dtype=float)
    single = X.ndim == 1
    X = np.atleast_2d(X)
    Xh = np.hstack([X, np.ones((len(X), 1))])
    xh = Xh @ camera.matrix.T
    x = xh[:, :2] / xh[:, 2:3]
    return x[0] if single else x


def _similarity(points, target_mean_dist):
    centroid = points.mean(axis=0)
    centered = points - centroid
    mean_dist = np.linalg.norm(centered, axis=1).mean()
    if mean_dist == 0:
        raise DegenerateError("all points coincide")
    s = target_mean_dist / mean_dist
    d = points.shape[1]
    T = np.eye(d + 1)
    T[:d, :d] *= s
    T[:d, d] = -s * centroid
    return T


def estimate_camera(points2d, points3d):
    """Affine camera minimising the summed squared reprojection error.

    Parameters
    ----------
    points2d : array_like, shape (m, 2)
    points3d : array_like, shape (m, 3)

    Raises
    ------
    ValidationError
        On count mismatch or ``m < 4``.
    DegenerateError
        If the centred 3D configuration has rank below 3.
    """
    x = np.asarray(points2d, dtype=float)
    X = np.asarray(points3d, dtype=float)
    if x.ndim != 2 or x.shape[1] != 2 or X.ndim != 2 or X.shape[1] != 3:
        raise ValidationError(f"expected (m,2) and (m,3) arrays, got {x.shape} and {X.shape}")
    if len(x) != len(X):
        raise ValidationError(f"point count mismatch: {len(x)} 2D vs {len(X)} 3D")
    if len(x) < 4:
        raise ValidationError(f"affine camera needs at least 4 correspondences, got {len(x)}")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(X))):
        raise ValidationError("non-finite correspondence coordinates")

    T = _similarity(x, np.sqrt(2.0))
    U = _similarity(X, np.sqrt(3.0))
    xn = x * T[0, 0] + T[:2, 2]
    Xn = X * U[0, 0] + U[:3, 3]

    sv = np.linalg.svd(Xn - Xn.mean(axis=0), compute_uv=False)
    if sv[2] <= 1e-10 * sv[0]:
        raise DegenerateError(f"3D points are coplanar or collinear (singular values {sv})")

    design = np.hstack([Xn, np.ones((len(Xn), 1))])
    rows, *_ = np.linalg.lstsq(design, xn, rcond=None)
    Pn = np.vstack([rows.T, AFFINE_LAST_ROW])
    P = np.linalg.solve(T, Pn @ U)
    P[2] = AFFINE_LAST_ROW
    return CameraMatrix(P)


def reprojection_rmse(camera, points2d, points3d):
    d = project(camera, points3d) - np.asarray(points2d, dtype=float)
    return float(np.sqrt(np.mean(np.sum(d * d, axis=1))))
