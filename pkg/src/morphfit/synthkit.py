"""Deterministic synthetic faces, pose corpora and landmark tracks.

The template is a low-polygon frontal face (template version 1): 55 named
landmark vertices followed by a grid of filler vertices, triangulated once
on the canonical layout so every subject and pose shares one topology.
Landmark vertices come first, so the default landmark mapping is
``name -> position in LANDMARK_NAMES``.

Mouth motion is driven by four articulation parameters (jaw, open, spread,
round). Each subject turns them into vertex displacements through fields
whose *shape* depends on the subject's mouth proportions, which is what
makes one subject's motion only approximately representable by another
subject's model.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial import Delaunay

from .camerafit import CameraMatrix, project
from .errors import ValidationError
from .meshio import LandmarkMapping, LandmarkTrack, Mesh

TEMPLATE_VERSION = 1

LANDMARK_NAMES = (
    # brows, subject right to left
    "brow_right_0", "brow_right_1", "brow_right_2", "brow_right_3", "brow_right_4",
    "brow_left_0", "brow_left_1", "brow_left_2", "brow_left_3", "brow_left_4",
    # nose bridge and lower nose
    "nasion", "nose_bridge_1", "nose_bridge_2", "nose_tip",
    "alare_right", "nostril_right", "subnasale", "nostril_left", "alare_left",
    # eyes
    "exocanthion_right", "eye_right_upper_0", "eye_right_upper_1",
    "endocanthion_right", "eye_right_lower_1", "eye_right_lower_0",
    "endocanthion_left", "eye_left_upper_1", "eye_left_upper_0",
    "exocanthion_left", "eye_left_lower_0", "eye_left_lower_1",
    # outer lip contour
    "cheilion_right", "lip_upper_outer_right_1", "lip_upper_outer_right_0",
    "labrale_superius", "lip_upper_outer_left_0", "lip_upper_outer_left_1",
    "cheilion_left", "lip_lower_outer_left_1", "lip_lower_outer_left_0",
    "labrale_inferius", "lip_lower_outer_right_0", "lip_lower_outer_right_1",
    # inner lip contour
    "inner_lip_corner_right", "inner_lip_upper_right", "inner_lip_top_mid",
    "inner_lip_upper_left", "inner_lip_corner_left", "inner_lip_lower_left",
    "inner_lip_bottom_mid", "inner_lip_lower_right",
    # extra anthropometric points (not part of the 51-point tracking set)
    "gnathion", "zygion_right", "zygion_left", "sublabiale",
)
TRACKING_51 = LANDMARK_NAMES[:51]

# articulation parameters: jaw drop, lip aperture, lip spread, lip rounding
VISEMES = {
    "AH": (0.0, 1.0, 0.1, 0.0),
    "B_M_P": (0.1, 0.0, 0.0, 0.0),
    "big_aah": (1.0, 0.8, 0.2, 0.0),
    "ch_J_sh": (0.3, 0.3, 0.0, 0.8),
    "D_S_T": (0.3, 0.3, 0.6, 0.0),
    "ee": (0.2, 0.2, 1.0, 0.0),
    "eh": (0.5, 0.5, 0.5, 0.0),
    "F_V": (0.1, 0.1, 0.3, 0.1),
    "i": (0.3, 0.4, 0.7, 0.0),
    "K": (0.5, 0.4, 0.3, 0.0),
    "N": (0.3, 0.2, 0.4, 0.0),
    "oh": (0.6, 0.6, 0.0, 0.7),
    "ooh_Q": (0.2, 0.2, 0.0, 1.0),
    "R": (0.3, 0.3, 0.0, 0.6),
    "th": (0.3, 0.3, 0.4, 0.0),
    "W": (0.1, 0.2, 0.0, 0.9),
}
VISEME_ORDER = tuple(VISEMES)

SENTENCES = {
    "bin_blue_at_f_two_now": ("B_M_P", "i", "N", "B_M_P", "ooh_Q", "AH", "D_S_T", "eh", "F_V", "D_S_T", "ooh_Q", "N", "AH"),
    "lay_green_by_a_seven_again": ("N", "eh", "K", "R", "ee", "N", "B_M_P", "big_aah", "ee", "D_S_T", "eh", "F_V", "N", "AH", "K", "eh", "N"),
    "place_red_in_b_nine_soon": ("B_M_P", "N", "eh", "D_S_T", "R", "eh", "D_S_T", "i", "N", "B_M_P", "ee", "N", "big_aah", "N", "D_S_T", "ooh_Q", "N"),
    "set_white_with_c_one_please": ("D_S_T", "eh", "D_S_T", "W", "big_aah", "D_S_T", "W", "i", "th", "D_S_T", "ee", "W", "AH", "N", "B_M_P", "N", "ee", "D_S_T"),
}
SENTENCE_IDS = tuple(SENTENCES)

# canonical frontal camera: pixels per face unit and principal point
FOCAL = 180.0
PRINCIPAL = (320.0, 240.0)

MOUTH_CENTER_Y = -0.38


@dataclass(frozen=True)
class SubjectSpec:
    subject_id: str
    mouth_height_scale: float = 1.0
    mouth_width_scale: float = 1.0
    lip_thickness_scale: float = 1.0
    noise_seed: int = 0

    def __post_init__(self):
        for name in ("mouth_height_scale", "mouth_width_scale", "lip_thickness_scale"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValidationError(f"{self.subject_id}: {name} must be positive, got {v}")

    @classmethod
    def from_dict(cls, d):
        known = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "subject_id" not in known:
            raise ValidationError("subject spec needs subject_id")
        return cls(**known)


# --- template -----------------------------------------------------------------


def _mouth_landmarks(hs, ws, lt):
    """Neutral lip contour in face units (x, y) for the given scales."""
    yc = MOUTH_CENTER_Y
    mw = 0.24 * ws
    gap = 0.006 * hs
    tu = 0.055 * hs * lt
    tl = 0.075 * hs * lt
    inner_w = 0.8 * mw
    top = yc + gap
    bot = yc - gap
    return {
        "cheilion_right": (-mw, yc),
        "lip_upper_outer_right_1": (-0.62 * mw, top + 0.75 * tu),
        "lip_upper_outer_right_0": (-0.25 * mw, top + 1.08 * tu),
        "labrale_superius": (0.0, top + tu),
        "lip_upper_outer_left_0": (0.25 * mw, top + 1.08 * tu),
        "lip_upper_outer_left_1": (0.62 * mw, top + 0.75 * tu),
        "cheilion_left": (mw, yc),
        "lip_lower_outer_left_1": (0.6 * mw, bot - 0.7 * tl),
        "lip_lower_outer_left_0": (0.28 * mw, bot - 0.95 * tl),
        "labrale_inferius": (0.0, bot - tl),
        "lip_lower_outer_right_0": (-0.28 * mw, bot - 0.95 * tl),
        "lip_lower_outer_right_1": (-0.6 * mw, bot - 0.7 * tl),
        "inner_lip_corner_right": (-inner_w, yc),
        "inner_lip_upper_right": (-0.45 * inner_w, top - 0.1 * gap),
        "inner_lip_top_mid": (0.0, top),
        "inner_lip_upper_left": (0.45 * inner_w, top - 0.1 * gap),
        "inner_lip_corner_left": (inner_w, yc),
        "inner_lip_lower_left": (0.45 * inner_w, bot + 0.1 * gap),
        "inner_lip_bottom_mid": (0.0, bot),
        "inner_lip_lower_right": (-0.45 * inner_w, bot + 0.1 * gap),
    }


def _static_landmarks(hs=1.0, ws=1.0, lt=1.0):
    pts = {}
    for k, x in enumerate(np.linspace(-0.62, -0.16, 5)):
        pts[f"brow_right_{k}"] = (x, 0.66 + 0.06 * math.sin(math.pi * k / 4))
        pts[f"brow_left_{4 - k}"] = (-x, 0.66 + 0.06 * math.sin(math.pi * k / 4))
    pts.update(
        nasion=(0.0, 0.50),
        nose_bridge_1=(0.0, 0.36),
        nose_bridge_2=(0.0, 0.21),
        nose_tip=(0.0, 0.06),
        alare_right=(-0.17, -0.03),
        nostril_right=(-0.08, -0.07),
        subnasale=(0.0, -0.10),
        nostril_left=(0.08, -0.07),
        alare_left=(0.17, -0.03),
        exocanthion_right=(-0.52, 0.45),
        eye_right_upper_0=(-0.43, 0.50),
        eye_right_upper_1=(-0.26, 0.50),
        endocanthion_right=(-0.17, 0.44),
        eye_right_lower_1=(-0.26, 0.41),
        eye_right_lower_0=(-0.43, 0.41),
        endocanthion_left=(0.17, 0.44),
        eye_left_upper_1=(0.26, 0.50),
        eye_left_upper_0=(0.43, 0.50),
        exocanthion_left=(0.52, 0.45),
        eye_left_lower_0=(0.43, 0.41),
        eye_left_lower_1=(0.26, 0.41),
        gnathion=(0.0, -1.05),
        zygion_right=(-0.78, 0.22),
        zygion_left=(0.78, 0.22),
        sublabiale=(0.0, -0.66),
    )
    pts.update(_mouth_landmarks(hs, ws, lt))
    return np.array([pts[n] for n in LANDMARK_NAMES], dtype=float)


def _filler_points(landmarks_xy, spacing=0.1, clearance=0.045):
    xs = np.arange(-0.85, 0.85 + 1e-9, spacing)
    ys = np.arange(-1.1, 0.8 + 1e-9, spacing)
    gx, gy = np.meshgrid(xs, ys)
    cand = np.column_stack([gx.ravel(), gy.ravel()])
    inside = (cand[:, 0] / 0.9) ** 2 + ((cand[:, 1] + 0.15) / 1.0) ** 2 <= 1.0
    cand = cand[inside]
    d = np.linalg.norm(cand[:, None, :] - landmarks_xy[None, :, :], axis=2).min(axis=1)
    return cand[d > clearance]


def _depth(xy):
    x, y = xy[:, 0], xy[:, 1]
    base = 0.5 * np.sqrt(np.clip(1.0 - (x / 0.95) ** 2 - ((y + 0.15) / 1.1) ** 2, 0.0, None))
    nose = 0.38 * np.exp(-((x / 0.12) ** 2) - ((y - 0.12) / 0.28) ** 2)
    lips = 0.06 * np.exp(-((x / 0.25) ** 2) - ((y - MOUTH_CENTER_Y) / 0.1) ** 2)
    return base + nose + lips


_TEMPLATE_CACHE = {}


def template():
    """Canonical neutral vertices ``(N, 2)`` and faces, landmarks first."""
    if "t" not in _TEMPLATE_CACHE:
        lm = _static_landmarks()
        filler = _filler_points(lm)
        xy = np.vstack([lm, filler])
        faces = Delaunay(xy).simplices.astype(np.int64)
        # consistent counter-clockwise orientation
        a, b, c = xy[faces[:, 0]], xy[faces[:, 1]], xy[faces[:, 2]]
        cross = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (c[:, 0] - a[:, 0])
        faces[cross < 0] = faces[cross < 0][:, [0, 2, 1]]
        order = np.lexsort((faces[:, 2], faces[:, 1], faces[:, 0]))
        _TEMPLATE_CACHE["t"] = (xy, faces[order])
    return _TEMPLATE_CACHE["t"]


def vertex_count():
    return len(template()[0])


def default_mapping():
    return LandmarkMapping({n: i for i, n in enumerate(LANDMARK_NAMES)})


def _smoothstep(t):
    t = np.clip(t, 0.0, 1.0)
    return t * t * (3.0 - 2.0 * t)


def _mouth_weight(xy, rx=0.42, ry=0.3):
    # compact support: exactly zero outside the ellipse
    r = np.sqrt((xy[:, 0] / rx) ** 2 + ((xy[:, 1] - MOUTH_CENTER_Y) / ry) ** 2)
    return 1.0 - _smoothstep(r)


def _identity_field(xy, seed):
    """Small smooth per-subject shape perturbation, zero at the mouth centre line."""
    rng = np.random.default_rng([TEMPLATE_VERSION, seed])
    c = rng.normal(scale=0.02, size=6)
    x, y = xy[:, 0], xy[:, 1]
    dx = c[0] * x + c[1] * x * y
    dy = c[2] * (y - MOUTH_CENTER_Y) + c[3] * x * x
    dz = c[4] * np.cos(math.pi * x) + c[5] * y
    return np.column_stack([dx, dy, dz])


def neutral_vertices(spec):
    """Subject neutral head ``(N, 3)`` in face units."""
    xy0, _ = template()
    n_lm = len(LANDMARK_NAMES)
    hs, ws, lt = spec.mouth_height_scale, spec.mouth_width_scale, spec.lip_thickness_scale
    xy = xy0.copy()
    # filler vertices follow the mouth scaling smoothly; landmarks are exact
    w = _mouth_weight(xy0[n_lm:], 0.5, 0.35)
    rel = xy0[n_lm:] - (0.0, MOUTH_CENTER_Y)
    vert = hs * (1.0 + (lt - 1.0) * 0.6)
    xy[n_lm:, 0] = rel[:, 0] * (1 + (ws - 1) * w)
    xy[n_lm:, 1] = MOUTH_CENTER_Y + rel[:, 1] * (1 + (vert - 1) * w)
    xy[:n_lm] = _static_landmarks(hs, ws, lt)
    xyz = np.column_stack([xy, _depth(xy0)])
    return xyz + _identity_field(xy0, spec.noise_seed)


def articulation_fields(spec):
    """Per-parameter displacement fields, shape ``(4, N, 3)``.

    The lip-aperture profile width, the split of opening between the upper
    and lower lip, and the aperture side-effects of spreading and rounding
    all depend nonlinearly on the subject's mouth scales.
    """
    xy0, _ = template()
    hs, ws = spec.mouth_height_scale, spec.mouth_width_scale
    x = xy0[:, 0]
    y = xy0[:, 1]
    dy_c = y - MOUTH_CENTER_Y
    # -1 for lower lip side, +1 for upper, 0 on the mouth line
    side = np.sign(np.round(dy_c, 12))
    near = _mouth_weight(xy0)
    lower_face = _smoothstep((-0.05 - y) / 0.5) * (1.0 - _smoothstep((np.abs(x) - 0.45) / 0.3))

    fields = np.zeros((4, len(x), 3))

    # jaw drop: lower face rotates down and slightly back
    jaw = lower_face * np.where(side < 0, 1.0, 0.25 * near)
    fields[0, :, 1] = -0.11 * jaw
    fields[0, :, 2] = -0.03 * jaw

    # lip aperture: profile sharpness grows as mouth height shrinks
    width = 0.16 * ws * hs**1.5
    profile = np.exp(-((x / width) ** 2)) * near
    up_share = hs / (1.0 + hs)
    amp = 0.07 * hs**1.3
    fields[1, :, 1] = amp * profile * np.where(side > 0, up_share, -(1.0 - up_share))

    # spread: corners outwards, aperture thins in proportion to mouth height
    fields[2, :, 0] = 0.05 * ws * np.tanh(x / 0.1) * near
    fields[2, :, 1] = -0.02 * (hs**2 - 0.5) * side * np.exp(-((x / (0.12 * ws)) ** 2)) * near

    # rounding: corners inwards, lips forward, aperture rounds out
    fields[3, :, 0] = -0.06 * ws * np.tanh(x / 0.12) * near
    fields[3, :, 2] = 0.05 * near
    fields[3, :, 1] = 0.025 * hs**-1.0 * side * np.exp(-((x / (0.07 * ws * hs)) ** 2)) * near
    return _decouple_from_camera(fields, neutral_vertices(spec), near)


def _decouple_from_camera(fields, neutral, weight):
    """Remove from each in-plane field its best affine fit over the landmarks.

    The removed part is re-applied through ``weight`` (compactly supported),
    so fields stay local to the mouth while becoming orthogonal, over the
    landmark set, to every affine function of the neutral landmark positions.
    An affine camera fitted to the neutral landmarks is then unaffected by
    articulation.
    """
    n_lm = len(LANDMARK_NAMES)
    Xh = np.hstack([neutral[:n_lm], np.ones((n_lm, 1))])
    w = weight[:n_lm]
    gram = (Xh * w[:, None]).T @ Xh
    out = fields.copy()
    full = np.hstack([neutral, np.ones((len(neutral), 1))])
    for k in range(fields.shape[0]):
        for c in (0, 1):
            coef = np.linalg.solve(gram, Xh.T @ fields[k, :n_lm, c])
            out[k, :, c] -= weight * (full @ coef)
    return out


def articulate(spec, params, neutral=None, fields=None):
    neutral = neutral_vertices(spec) if neutral is None else neutral
    fields = articulation_fields(spec) if fields is None else fields
    return neutral + np.tensordot(np.asarray(params, dtype=float), fields, axes=1)


def pose_schedule(pose_count):
    """Neutral first, then visemes cycled over evenly spaced intensity levels."""
    if pose_count < 2:
        raise ValidationError(f"pose_count must be >= 2, got {pose_count}")
    n_vis = len(VISEME_ORDER)
    levels = math.ceil((pose_count - 1) / n_vis)
    sched = [("neutral", 0.0)]
    for k in range(pose_count - 1):
        sched.append((VISEME_ORDER[k % n_vis], (k // n_vis + 1) / levels))
    return sched


def generate_corpus(spec, pose_count=16):
    """Topology-identical pose meshes: neutral plus viseme/intensity poses."""
    _, faces = template()
    neutral = neutral_vertices(spec)
    fields = articulation_fields(spec)
    meshes = []
    for viseme, level in pose_schedule(pose_count):
        params = np.zeros(4) if viseme == "neutral" else level * np.array(VISEMES[viseme])
        meshes.append(Mesh(articulate(spec, params, neutral, fields), faces))
    return meshes


def viseme_curve(sentence_id, frame_count):
    """Articulation parameters ``(frame_count, 4)`` for a canonical sentence.

    Rest, then each viseme target in turn, then rest, joined by cosine
    easing so the trajectory is smooth.
    """
    if sentence_id not in SENTENCES:
        raise ValidationError(f"unknown sentence {sentence_id!r}; choose from {', '.join(SENTENCE_IDS)}")
    if frame_count < 2:
        raise ValidationError(f"frame_count must be >= 2, got {frame_count}")
    keys = [np.zeros(4)] + [np.array(VISEMES[v]) for v in SENTENCES[sentence_id]] + [np.zeros(4)]
    keys = np.array(keys)
    t = np.linspace(0.0, len(keys) - 1, frame_count)
    i = np.minimum(np.floor(t).astype(int), len(keys) - 2)
    u = 0.5 - 0.5 * np.cos(math.pi * (t - i))
    return keys[i] * (1 - u)[:, None] + keys[i + 1] * u[:, None]


def frontal_camera(scale=1.0):
    f = FOCAL * scale
    return CameraMatrix(
        [[f, 0.0, 0.0, PRINCIPAL[0]], [0.0, -f, 0.0, PRINCIPAL[1]], [0.0, 0.0, 0.0, 1.0]]
    )


def generate_track(spec, sentence_id, frame_count=60, camera_scale=1.0, names=LANDMARK_NAMES, frame_rate=25.0):
    """Landmark track of ``spec`` uttering a canonical sentence, seen frontally."""
    curve = viseme_curve(sentence_id, frame_count)
    neutral = neutral_vertices(spec)
    fields = articulation_fields(spec)
    idx = [LANDMARK_NAMES.index(n) for n in names]
    cam = frontal_camera(camera_scale)
    pts = np.array([project(cam, articulate(spec, p, neutral, fields)[idx]) for p in curve])
    order = np.argsort(names)
    return LandmarkTrack(
        f"{spec.subject_id}_{sentence_id}",
        tuple(np.asarray(names)[order]),
        np.arange(frame_count),
        pts[:, order],
        frame_rate,
    )


def neutral_landmarks(spec, camera_scale=1.0):
    """Neutral-face landmarks in pixels, for anthropometric measurement."""
    pts = project(frontal_camera(camera_scale), neutral_vertices(spec)[: len(LANDMARK_NAMES)])
    return dict(zip(LANDMARK_NAMES, pts))


def mouth_region_mask():
    """Vertices that articulation may move (lower face around the mouth)."""
    xy0, _ = template()
    spec = SubjectSpec("probe", 1.3, 1.2, 1.1)
    return np.any(np.abs(articulation_fields(spec)) > 0, axis=(0, 2))
