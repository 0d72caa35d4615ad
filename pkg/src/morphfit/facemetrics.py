"""Facial distances, anthropometric indices, and cohort classification.

Indices are ratios of landmark distances (x100), so they do not depend on
camera distance. A cohort is classified per index into low / middle / high
around the quartiles, with Tukey fences flagging outliers and bootstrap
confidence intervals of the quartiles defining the hyphenated boundary
bands ("low-to-middle", "middle-to-high").
"""

import json
import math
from dataclasses import dataclass
from importlib import resources

import numpy as np

from .errors import InsufficientDataError, ParseError, ValidationError

# index id -> (numerator distance, denominator distance)
INDEX_FORMULAS = {
    "I1": ("D1", "D2"),
    "I2": ("D4", "D3"),
    "I3": ("D6", "D5"),
    "I4": ("D5", "D1"),
    "I5": ("D6", "D2"),
    "I6": ("D7", "D8"),
    "I7": ("D7", "D1"),
    "I8": ("D9", "D1"),
    "I9": ("D10", "D1"),
    "I10": ("D8", "D3"),
    "I11": ("D11", "D1"),
    "I12": ("D12", "D13"),
}
INDEX_NAMES = {
    "I1": "facial",
    "I2": "intercanthal",
    "I3": "nasal",
    "I4": "nasofacial",
    "I5": "nose-face width",
    "I6": "lip area",
    "I7": "vertical mouth height",
    "I8": "upper lip thickness",
    "I9": "lower lip thickness",
    "I10": "mouth width",
    "I11": "chin size",
    "I12": "nose-upper-lips",
}
INDEX_IDS = tuple(INDEX_FORMULAS)
DISTANCE_IDS = tuple(f"D{i}" for i in range(1, 14))

CORE_CLASSES = ("low", "middle", "high")
BANDS = ("low-to-middle", "middle-to-high")


@dataclass(frozen=True)
class DistanceSchema:
    """Ordered ``(distance_id, endpoint_a, endpoint_b)`` records for D1..D13."""

    entries: tuple

    def __post_init__(self):
        entries = tuple(tuple(e) for e in self.entries)
        ids = [e[0] for e in entries]
        if len(entries) != 13 or sorted(ids, key=lambda s: int(s[1:])) != list(DISTANCE_IDS):
            raise ValidationError(f"schema must define exactly D1..D13, got {ids}")
        for did, a, b in entries:
            if a == b:
                raise ValidationError(f"{did}: endpoints must differ, both are {a!r}")
        object.__setattr__(self, "entries", entries)

    @property
    def landmark_names(self):
        return sorted({n for _, a, b in self.entries for n in (a, b)})

    @classmethod
    def from_json_obj(cls, obj):
        try:
            recs = obj["distances"]
            return cls(tuple((r["id"], r["a"], r["b"]) for r in recs))
        except (KeyError, TypeError) as exc:
            raise ValidationError(f"schema JSON needs distances[{{id,a,b}}]: {exc}") from None


def load_schema(path=None):
    """Load a schema JSON file, or the packaged default when ``path`` is None."""
    try:
        if path is None:
            text = resources.files("morphfit").joinpath("data/default_schema.json").read_text("utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid schema JSON: {exc.msg}", path, exc.lineno) from None
    return DistanceSchema.from_json_obj(obj)


def default_schema():
    return load_schema(None)


def compute_distances(landmarks, schema):
    """Euclidean distance (pixels) for each schema entry."""
    out = {}
    for did, a, b in schema.entries:
        for name in (a, b):
            if name not in landmarks:
                raise ValidationError(f"{did}: landmark {name!r} missing")
        pa = np.asarray(landmarks[a], dtype=float)
        pb = np.asarray(landmarks[b], dtype=float)
        out[did] = float(math.hypot(*(pa - pb)))
    return out


@dataclass(frozen=True)
class FacialIndexProfile:
    subject_id: str
    indices: dict

    def __post_init__(self):
        missing = [i for i in INDEX_IDS if i not in self.indices]
        if missing:
            raise ValidationError(f"{self.subject_id}: missing index {missing[0]}")
        for i in INDEX_IDS:
            v = self.indices[i]
            if not (math.isfinite(v) and v > 0):
                raise ValidationError(f"{self.subject_id}: index {i} must be finite and > 0, got {v}")

    def __getitem__(self, index_id):
        return self.indices[index_id]


def compute_indices(distances, subject_id="subject"):
    indices = {}
    for iid, (num, den) in INDEX_FORMULAS.items():
        for d in (num, den):
            if d not in distances:
                raise ValidationError(f"{iid}: distance {d} missing")
        if distances[den] == 0:
            raise ValidationError(f"{iid}: zero denominator {den}")
        indices[iid] = 100.0 * distances[num] / distances[den]
    return FacialIndexProfile(subject_id, indices)


def profile_from_landmarks(landmarks, schema=None, subject_id="subject"):
    schema = default_schema() if schema is None else schema
    return compute_indices(compute_distances(landmarks, schema), subject_id)


# --- classification ----------------------------------------------------------


def quantile(values, q):
    """Linear interpolation between order statistics (``h = (n-1) q``).

    Works along the last axis, so a ``(B, n)`` array of bootstrap samples is
    handled in one call.
    """
    x = np.sort(np.asarray(values, dtype=float), axis=-1)
    n = x.shape[-1]
    h = (n - 1) * q
    lo = int(math.floor(h))
    hi = min(lo + 1, n - 1)
    frac = h - lo
    return x[..., lo] + frac * (x[..., hi] - x[..., lo])


@dataclass(frozen=True)
class ClassLabel:
    core: str
    band: str | None = None
    outlier: bool = False

    def __str__(self):
        return self.band if self.band else self.core


@dataclass(frozen=True)
class IndexBoundaries:
    q1: float
    q3: float
    iqr: float
    lower_fence: float
    upper_fence: float
    q1_interval: tuple
    q3_interval: tuple


@dataclass(frozen=True)
class CohortClassification:
    confidence: float
    boundaries: dict  # index id -> IndexBoundaries
    labels: dict  # subject id -> {index id -> ClassLabel}

    def counts(self, index_id):
        c = dict.fromkeys(CORE_CLASSES, 0)
        for per_subject in self.labels.values():
            c[per_subject[index_id].core] += 1
        return c


def core_class(value, q1, q3):
    if value < q1:
        return "low"
    if value > q3:
        return "high"
    return "middle"


def _band(value, b):
    def inside(iv):
        return iv[1] > iv[0] and iv[0] <= value <= iv[1]

    in_low, in_high = inside(b.q1_interval), inside(b.q3_interval)
    if in_low and in_high:
        return BANDS[0] if abs(value - b.q1) <= abs(value - b.q3) else BANDS[1]
    if in_low:
        return BANDS[0]
    if in_high:
        return BANDS[1]
    return None


def index_boundaries(values, confidence=0.8, n_boot=1000, seed=42):
    """Quartiles, Tukey fences and bootstrap intervals of Q1/Q3 for one index."""
    x = np.sort(np.asarray(values, dtype=float))
    q1, q3 = quantile(x, 0.25), quantile(x, 0.75)
    iqr = q3 - q1
    # resample the sorted values so the result depends only on the multiset
    rng = np.random.default_rng(seed)
    draws = x[rng.integers(0, len(x), size=(n_boot, len(x)))]
    bq1, bq3 = quantile(draws, 0.25), quantile(draws, 0.75)
    tail = (1.0 - confidence) / 2.0
    return IndexBoundaries(
        q1=float(q1),
        q3=float(q3),
        iqr=float(iqr),
        lower_fence=float(q1 - 1.5 * iqr),
        upper_fence=float(q3 + 1.5 * iqr),
        q1_interval=(float(quantile(bq1, tail)), float(quantile(bq1, 1 - tail))),
        q3_interval=(float(quantile(bq3, tail)), float(quantile(bq3, 1 - tail))),
    )


def classify_cohort(profiles, confidence=0.8, n_boot=1000, seed=42):
    """Classify every subject on every index.

    Core class is low below Q1, high above Q3, middle otherwise (inclusive).
    Values outside ``[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`` are flagged as outliers
    but keep their core class. A subject whose value falls in the
    ``confidence`` bootstrap interval of Q1 (Q3) gets the band
    ``low-to-middle`` (``middle-to-high``); zero-width intervals never
    produce a band.
    """
    profiles = list(profiles)
    if len(profiles) < 5:
        raise InsufficientDataError(f"cohort classification needs at least 5 profiles, got {len(profiles)}")
    if not 0.0 < confidence < 1.0:
        raise ValidationError(f"confidence must lie in (0, 1), got {confidence}")
    ids = [p.subject_id for p in profiles]
    if len(set(ids)) != len(ids):
        raise ValidationError("duplicate subject ids in cohort")

    boundaries = {}
    labels = {sid: {} for sid in ids}
    for k, iid in enumerate(INDEX_IDS):
        values = [p.indices[iid] for p in profiles]
        b = index_boundaries(values, confidence, n_boot, seed + k)
        boundaries[iid] = b
        for p, v in zip(profiles, values):
            labels[p.subject_id][iid] = ClassLabel(
                core=core_class(v, b.q1, b.q3),
                band=_band(v, b),
                outlier=bool(v < b.lower_fence or v > b.upper_fence),
            )
    return CohortClassification(confidence, boundaries, labels)
