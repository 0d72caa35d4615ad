"""Lip-motion evaluation: mouth aperture trajectories, RMSE and t-tests.

Both the source video and every animated target go through the same
geometry chain: landmarks are divided per frame by the distance from the
midpoint of the inner eye corners to the nose tip, mouth width and height
are measured on the inner lip contour, and each channel is min-max scaled
per sentence before the per-sentence RMSE is taken.
"""

import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InsufficientDataError, MorphfitError, ValidationError
from .meshio import LandmarkTrack
from .shapefit import FitConfig, animate, fit_track

log = logging.getLogger(__name__)

INNER_CORNER_RIGHT = "inner_lip_corner_right"
INNER_CORNER_LEFT = "inner_lip_corner_left"
INNER_TOP = "inner_lip_top_mid"
INNER_BOTTOM = "inner_lip_bottom_mid"
EYE_INNER_RIGHT = "endocanthion_right"
EYE_INNER_LEFT = "endocanthion_left"
NOSE_TIP = "nose_tip"

MOUTH_LANDMARKS = (INNER_CORNER_RIGHT, INNER_CORNER_LEFT, INNER_TOP, INNER_BOTTOM)
REFERENCE_LANDMARKS = (EYE_INNER_RIGHT, EYE_INNER_LEFT, NOSE_TIP)
CHANNELS = ("width", "height")


@dataclass(frozen=True, eq=False)
class MouthTrajectory:
    video_id: str
    width: np.ndarray
    height: np.ndarray
    state: str = "raw"

    def __post_init__(self):
        w = np.array(self.width, dtype=float).reshape(-1)
        h = np.array(self.height, dtype=float).reshape(-1)
        if w.shape != h.shape:
            raise ValidationError(f"{self.video_id}: width/height lengths differ")
        if not (np.all(np.isfinite(w)) and np.all(np.isfinite(h))):
            raise ValidationError(f"{self.video_id}: non-finite mouth measurement")
        if self.state not in ("raw", "scale-normalized", "minmax-normalized"):
            raise ValidationError(f"unknown normalization state {self.state!r}")
        w.setflags(write=False)
        h.setflags(write=False)
        object.__setattr__(self, "width", w)
        object.__setattr__(self, "height", h)

    def __len__(self):
        return self.width.size

    def channel(self, name):
        return {"width": self.width, "height": self.height}[name]


def mouth_geometry(landmarks):
    """``(width, height)`` of the inner mouth contour for one frame."""
    for n in MOUTH_LANDMARKS:
        if n not in landmarks:
            raise ValidationError(f"mouth geometry needs landmark {n!r}")
    p = {n: np.asarray(landmarks[n], dtype=float) for n in MOUTH_LANDMARKS}
    width = math.hypot(*(p[INNER_CORNER_RIGHT] - p[INNER_CORNER_LEFT]))
    height = math.hypot(*(p[INNER_TOP] - p[INNER_BOTTOM]))
    return width, height


def reference_distance(points, names):
    """Eye-corner-midpoint to nose-tip distance per frame; ``points`` is ``(F, L, 2)``."""
    try:
        r, l, n = (names.index(k) for k in REFERENCE_LANDMARKS)
    except ValueError:
        raise ValidationError(f"scale normalization needs landmarks {', '.join(REFERENCE_LANDMARKS)}") from None
    mid = 0.5 * (points[:, r] + points[:, l])
    return np.linalg.norm(mid - points[:, n], axis=1)


def scale_normalize(track):
    """Divide every frame's coordinates by its reference distance."""
    ref = reference_distance(track.points, list(track.names))
    bad = np.flatnonzero(ref == 0)
    if bad.size:
        raise ValidationError(f"{track.video_id}: zero reference distance in frame {track.frame_indices[bad[0]]}")
    return track.with_points(track.points / ref[:, None, None])


def trajectory_from_track(track, state="raw"):
    idx = [track.index_of(n) if n in track.names else None for n in MOUTH_LANDMARKS]
    if None in idx:
        missing = MOUTH_LANDMARKS[idx.index(None)]
        raise ValidationError(f"{track.video_id}: mouth geometry needs landmark {missing!r}")
    P = track.points
    width = np.linalg.norm(P[:, idx[0]] - P[:, idx[1]], axis=1)
    height = np.linalg.norm(P[:, idx[2]] - P[:, idx[3]], axis=1)
    return MouthTrajectory(track.video_id, width, height, state)


def _minmax(v, label):
    lo, hi = v.min(), v.max()
    if hi == lo:
        warnings.warn(f"constant {label} channel; min-max normalized to zeros", RuntimeWarning)
        log.warning("event=constant_channel channel=%s", label)
        return np.zeros_like(v)
    return (v - lo) / (hi - lo)


def minmax_normalize(traj):
    if len(traj) < 2:
        raise InsufficientDataError(f"{traj.video_id}: min-max normalization needs >= 2 frames")
    return MouthTrajectory(
        traj.video_id,
        _minmax(traj.width, f"{traj.video_id}/width"),
        _minmax(traj.height, f"{traj.video_id}/height"),
        "minmax-normalized",
    )


def normalized_trajectory(track):
    """The full geometry chain: scale normalization, mouth measures, min-max."""
    return minmax_normalize(trajectory_from_track(scale_normalize(track), "scale-normalized"))


def rmse(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape or a.ndim != 1:
        raise ValidationError(f"rmse needs equal-length 1-D channels, got {a.shape} and {b.shape}")
    if a.size == 0:
        raise ValidationError("rmse of empty channels")
    d = a - b
    return float(np.sqrt(np.mean(d * d)))


# --- hypothesis tests --------------------------------------------------------


def _degenerate_p(diff_of_means):
    return 1.0 if diff_of_means == 0 else 0.0


def welch_ttest(a, b):
    """Two-sided Welch two-sample t-test p-value.

    When both groups have zero variance the statistic is undefined; equal
    means give ``p = 1`` and distinct means ``p = 0``.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise InsufficientDataError(f"t-test needs >= 2 values per group, got {a.size} and {b.size}")
    va = a.var(ddof=1) / a.size
    vb = b.var(ddof=1) / b.size
    diff = a.mean() - b.mean()
    se2 = va + vb
    if se2 == 0:
        return _degenerate_p(diff)
    t = diff / math.sqrt(se2)
    # scaled form avoids underflow when the variances are tiny
    ra, rb = va / se2, vb / se2
    df = 1.0 / (ra**2 / (a.size - 1) + rb**2 / (b.size - 1))
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def student_ttest(a, b):
    """Two-sided pooled-variance two-sample t-test p-value."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.size < 2 or b.size < 2:
        raise InsufficientDataError(f"t-test needs >= 2 values per group, got {a.size} and {b.size}")
    df = a.size + b.size - 2
    pooled = ((a.size - 1) * a.var(ddof=1) + (b.size - 1) * b.var(ddof=1)) / df
    se2 = pooled * (1.0 / a.size + 1.0 / b.size)
    diff = a.mean() - b.mean()
    if se2 == 0:
        return _degenerate_p(diff)
    t = diff / math.sqrt(se2)
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), df)))


def paired_ttest(a, b):
    """Two-sided paired t-test p-value on ``a - b``."""
    d = np.asarray(a, dtype=float) - np.asarray(b, dtype=float)
    if d.size < 2:
        raise InsufficientDataError(f"paired t-test needs >= 2 pairs, got {d.size}")
    se2 = d.var(ddof=1) / d.size
    if se2 == 0:
        return _degenerate_p(d.mean())
    t = d.mean() / math.sqrt(se2)
    return float(min(1.0, 2.0 * stats.t.sf(abs(t), d.size - 1)))


TTESTS = {"welch": welch_ttest, "student": student_ttest}


def paired_comparison(corresponding, noncorresponding, variant="welch"):
    """p-value comparing corresponding-head RMSEs with pooled non-corresponding ones."""
    try:
        test = TTESTS[variant]
    except KeyError:
        raise ValidationError(f"unknown t-test variant {variant!r}; use one of {sorted(TTESTS)}") from None
    return test(corresponding, noncorresponding)


# --- experiment --------------------------------------------------------------


@dataclass(frozen=True)
class Source:
    subject: str
    class_label: str
    tracks: tuple  # LandmarkTrack per sentence


@dataclass(frozen=True)
class Target:
    subject: str
    class_label: str
    model: object  # MorphableModel


@dataclass(frozen=True)
class Experiment:
    sources: tuple
    targets: tuple
    mapping: object
    fit: FitConfig = FitConfig()
    ttest: str = "welch"


@dataclass
class Cell:
    source: str
    target: str
    sentence: str
    rmse_width: float = float("nan")
    rmse_height: float = float("nan")
    error: str | None = None
    source_traj: MouthTrajectory | None = field(default=None, repr=False)
    target_traj: MouthTrajectory | None = field(default=None, repr=False)

    @property
    def valid(self):
        return self.error is None

    def rmse(self, channel):
        return {"width": self.rmse_width, "height": self.rmse_height}[channel]


@dataclass(frozen=True)
class PValue:
    source: str
    comparison: str  # class label of the non-corresponding heads
    channel: str
    test: str  # "welch"/"student" on pooled groups, or "paired"
    n_corresponding: int
    n_other: int
    p: float


@dataclass
class EvaluationReport:
    cells: list
    pvalues: list
    target_classes: dict  # target subject -> class label
    source_classes: dict

    def valid_cells(self):
        return [c for c in self.cells if c.valid]

    def per_sentence(self, source, target, channel):
        return [c.rmse(channel) for c in self.cells if c.valid and c.source == source and c.target == target]

    def average(self, source, target, channel):
        vals = self.per_sentence(source, target, channel)
        return float(np.mean(vals)) if vals else float("nan")

    def pairs(self):
        seen = []
        for c in self.cells:
            if (c.source, c.target) not in seen:
                seen.append((c.source, c.target))
        return seen


def _mapped_track(model, mapping, fitted, video_id):
    meshes = animate(model, fitted)
    idx = mapping.indices
    pts = np.array([fr.camera.project(m.vertices[idx]) for fr, m in zip(fitted, meshes)])
    order = np.argsort(mapping.names)
    return LandmarkTrack(
        video_id,
        tuple(np.asarray(mapping.names)[order]),
        np.array([fr.frame_index for fr in fitted]),
        pts[:, order],
    )


def evaluate_cell(source_traj, track, target, mapping, fit):
    fitted = fit_track(target.model, mapping, track, fit)
    failed = [fr for fr in fitted if not fr.ok]
    if failed:
        raise ValidationError(f"frame {failed[0].frame_index} failed: {failed[0].error}")
    animated = _mapped_track(target.model, mapping, fitted, f"{track.video_id}->{target.subject}")
    traj = normalized_trajectory(animated)
    return traj, rmse(source_traj.width, traj.width), rmse(source_traj.height, traj.height)


def run_experiment(exp):
    """Map every source sentence onto every target head and score it.

    A failing cell is recorded with its error; the rest of the table is
    still produced.
    """
    if not exp.sources or not exp.targets:
        raise ValidationError("experiment needs at least one source and one target")
    cells = []
    for src in exp.sources:
        if not src.tracks:
            raise ValidationError(f"source {src.subject} has no sentences")
        for track in src.tracks:
            try:
                src_traj = normalized_trajectory(track)
            except MorphfitError as exc:
                for tgt in exp.targets:
                    cells.append(Cell(src.subject, tgt.subject, track.video_id, error=f"source: {exc}"))
                continue
            for tgt in exp.targets:
                cell = Cell(src.subject, tgt.subject, track.video_id, source_traj=src_traj)
                try:
                    cell.target_traj, cell.rmse_width, cell.rmse_height = evaluate_cell(
                        src_traj, track, tgt, exp.mapping, exp.fit
                    )
                except MorphfitError as exc:
                    cell.error = str(exc)
                    log.warning("event=cell_failed source=%s target=%s sentence=%s error=%s",
                                src.subject, tgt.subject, track.video_id, exc)
                cells.append(cell)
    report = EvaluationReport(
        cells,
        [],
        {t.subject: t.class_label for t in exp.targets},
        {s.subject: s.class_label for s in exp.sources},
    )
    report.pvalues = compare_heads(report, exp.ttest)
    return report


def compare_heads(report, variant="welch"):
    """Corresponding head vs. each class of non-corresponding heads, per source.

    Two pairings are reported: the pooled two-sample test (``variant``) of
    the corresponding head's per-sentence RMSEs against all sentences of all
    heads in the class, and a paired test per sentence against the class
    mean for that sentence.
    """
    out = []
    classes = sorted(set(report.target_classes.values()))
    for src in report.source_classes:
        if src not in report.target_classes:
            continue
        own = {c.sentence: c for c in report.cells if c.valid and c.source == src and c.target == src}
        for cls in classes:
            others = [t for t, k in report.target_classes.items() if k == cls and t != src]
            if not others:
                continue
            for ch in CHANNELS:
                corr = [own[s].rmse(ch) for s in own]
                pooled = [c.rmse(ch) for c in report.cells
                          if c.valid and c.source == src and c.target in others]
                try:
                    p = paired_comparison(corr, pooled, variant)
                except InsufficientDataError:
                    p = float("nan")
                out.append(PValue(src, cls, ch, variant, len(corr), len(pooled), p))

                paired_a, paired_b = [], []
                for s, cell in own.items():
                    vals = [c.rmse(ch) for c in report.cells
                            if c.valid and c.source == src and c.sentence == s and c.target in others]
                    if vals:
                        paired_a.append(cell.rmse(ch))
                        paired_b.append(float(np.mean(vals)))
                try:
                    pp = paired_ttest(paired_a, paired_b)
                except InsufficientDataError:
                    pp = float("nan")
                out.append(PValue(src, cls, ch, "paired", len(paired_a), len(paired_b), pp))
    return out
