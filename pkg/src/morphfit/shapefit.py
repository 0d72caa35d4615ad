"""Per-frame camera + shape fitting of a morphable model to 2D landmarks.

For a fixed affine camera the projected model landmarks are affine in the
shape coefficients, so the regularised cost

    E(alpha) = sum ||proj_i(alpha) - y_i||^2 / (2 sigma2d) + ||alpha||^2

is a ridge problem with the closed-form minimiser

    (A^T A + 2 sigma2d I) alpha = A^T (y - b).

Only the two inhomogeneous image coordinates enter the sum; the third
homogeneous coordinate is 1 for both terms under an affine camera.
"""

import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import camerafit
from .errors import MorphfitError, ValidationError
from .morphable import synthesize

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FitConfig:
    sigma2d: float = 9.0
    K: int | None = None
    alternations: int = 3

    def __post_init__(self):
        if not (self.sigma2d > 0 and math.isfinite(self.sigma2d)):
            raise ValidationError(f"sigma2d must be positive and finite, got {self.sigma2d}")
        if self.K is not None and self.K < 1:
            raise ValidationError(f"K must be >= 1, got {self.K}")
        if self.alternations < 0:
            raise ValidationError(f"alternations must be >= 0, got {self.alternations}")

    def resolve_K(self, model):
        K = model.n_components if self.K is None else self.K
        if not 1 <= K <= model.n_components:
            raise ValidationError(f"K={K} outside 1..{model.n_components} (model components)")
        return K


@dataclass(frozen=True, eq=False)
class FittedFrame:
    """Outcome of fitting one frame. Failed frames carry ``error`` and no fit."""

    frame_index: int
    camera: camerafit.CameraMatrix | None
    coeffs: np.ndarray | None
    residual: float
    history: tuple = field(default=(), repr=False)
    error: str | None = None

    @property
    def ok(self):
        return self.error is None


def design_matrix(camera, basis):
    """Rows ``2i, 2i+1`` hold the camera's linear part applied to the basis at landmark i.

    ``basis`` is ``(m, 3, K)`` as returned by ``MorphableModel.landmark_basis``.
    """
    m, _, K = basis.shape
    return np.einsum("rc,mck->mrk", camera.linear, basis).reshape(2 * m, K)


def objective(alpha, A, r, sigma2d):
    d = A @ alpha - r
    return float(d @ d / (2.0 * sigma2d) + alpha @ alpha)


def gradient(alpha, A, r, sigma2d):
    return A.T @ (A @ alpha - r) / sigma2d + 2.0 * alpha


def solve_coefficients(A, r, sigma2d):
    """Ridge solution via an orthogonal decomposition of the stacked system.

    ``[A; sqrt(2 sigma2d) I] alpha = [r; 0]`` has the same normal equations as
    ``(A^T A + 2 sigma2d I) alpha = A^T r`` but avoids squaring the condition
    number.
    """
    K = A.shape[1]
    stacked = np.vstack([A, np.sqrt(2.0 * sigma2d) * np.eye(K)])
    rhs = np.concatenate([r, np.zeros(K)])
    alpha, *_ = np.linalg.lstsq(stacked, rhs, rcond=None)
    return alpha


def _observed_array(mapping, observed):
    missing = [n for n in mapping.names if n not in observed]
    if missing:
        raise ValidationError(f"observed landmarks missing mapped landmark {missing[0]!r}")
    return np.array([observed[n] for n in mapping.names], dtype=float).reshape(-1, 2)


def fit_frame(model, mapping, observed, config=FitConfig(), frame_index=0):
    """Fit camera and shape coefficients to one frame of observed landmarks.

    The camera is first estimated against the mean-shape landmarks, the
    coefficients are solved in closed form, and the pair is refined
    ``config.alternations`` more times with the camera re-estimated against
    the current fitted landmarks.
    """
    K = config.resolve_K(model)
    mapping.validate(model.vertex_count)
    y2 = _observed_array(mapping, observed)
    y = y2.reshape(-1)
    mean_lm, basis = model.landmark_basis(mapping.indices, K)

    alpha = np.zeros(K)
    current = mean_lm
    history = []
    for _ in range(config.alternations + 1):
        camera = camerafit.estimate_camera(y2, current)
        A = design_matrix(camera, basis)
        b = camerafit.project(camera, mean_lm).reshape(-1)
        r = y - b
        if history:
            # value after the camera update, before the shape update
            history.append(objective(alpha, A, r, config.sigma2d))
        alpha = solve_coefficients(A, r, config.sigma2d)
        history.append(objective(alpha, A, r, config.sigma2d))
        current = mean_lm + basis @ alpha
    return FittedFrame(frame_index, camera, alpha, history[-1], tuple(history))


def _threads():
    raw = os.environ.get("MORPHFIT_THREADS", "1").strip() or "1"
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"MORPHFIT_THREADS must be an integer, got {raw!r}") from None
    if n < 0:
        raise ValidationError("MORPHFIT_THREADS must be >= 0")
    return (os.cpu_count() or 1) if n == 0 else n


def fit_track(model, mapping, track, config=FitConfig(), threads=None):
    """Fit every frame independently; failures are recorded, not raised."""
    if len(track) == 0:
        raise ValidationError(f"{track.video_id}: empty track")
    config.resolve_K(model)

    def one(f):
        idx = int(track.frame_indices[f])
        try:
            return fit_frame(model, mapping, track.frame(f), config, frame_index=idx)
        except MorphfitError as exc:
            log.warning("event=frame_failed video=%s frame=%d error=%s", track.video_id, idx, exc)
            return FittedFrame(idx, None, None, float("nan"), error=str(exc))

    threads = _threads() if threads is None else threads
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(one, range(len(track))))
    return [one(f) for f in range(len(track))]


def animate(model, fitted):
    """Mesh sequence from fitted coefficients (one mesh per frame)."""
    out = []
    for fr in fitted:
        if not fr.ok:
            raise ValidationError(f"frame {fr.frame_index} failed to fit: {fr.error}")
        out.append(synthesize(model, fr.coeffs))
    return out


def fitted_landmarks(model, mapping, fitted_frame):
    """2D positions of the mapped landmarks under the frame's fitted camera and shape."""
    mean_lm, basis = model.landmark_basis(mapping.indices, len(fitted_frame.coeffs))
    return camerafit.project(fitted_frame.camera, mean_lm + basis @ fitted_frame.coeffs)
