import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from morphfit.errors import InsufficientDataError, ValidationError
from morphfit.facemetrics import (
    DISTANCE_IDS,
    INDEX_IDS,
    DistanceSchema,
    FacialIndexProfile,
    classify_cohort,
    compute_distances,
    compute_indices,
    default_schema,
    index_boundaries,
    load_schema,
    profile_from_landmarks,
    quantile,
)

# independent restatement of the index table as (index, numerator, denominator)
FORMULA_TABLE = [
    ("I1", 1, 2), ("I2", 4, 3), ("I3", 6, 5), ("I4", 5, 1), ("I5", 6, 2), ("I6", 7, 8),
    ("I7", 7, 1), ("I8", 9, 1), ("I9", 10, 1), ("I10", 8, 3), ("I11", 11, 1), ("I12", 12, 13),
]


def sorted_quantile_oracle(values, q):
    xs = sorted(values)
    h = (len(xs) - 1) * q
    lo = math.floor(h)
    hi = min(lo + 1, len(xs) - 1)
    return xs[lo] + (h - lo) * (xs[hi] - xs[lo])


def oracle_labels(values):
    q1, q3 = sorted_quantile_oracle(values, 0.25), sorted_quantile_oracle(values, 0.75)
    iqr = q3 - q1
    core = ["low" if v < q1 else "high" if v > q3 else "middle" for v in values]
    out = [v < q1 - 1.5 * iqr or v > q3 + 1.5 * iqr for v in values]
    return core, out


def cohort(values_per_index):
    n = len(next(iter(values_per_index.values())))
    return [
        FacialIndexProfile(f"s{k:02d}", {i: float(values_per_index[i][k]) for i in INDEX_IDS})
        for k in range(n)
    ]


def uniform_cohort(values):
    return cohort({i: values for i in INDEX_IDS})


def random_landmarks(rng, schema):
    return {n: rng.uniform(0, 500, size=2) for n in schema.landmark_names}


def test_distance_examples():
    schema = default_schema()
    lm = {n: np.zeros(2) for n in schema.landmark_names}
    _, a, b = schema.entries[0]
    lm[b] = np.array([3.0, 4.0])
    d = compute_distances(lm, schema)
    assert d["D1"] == 5.0
    assert set(d) == set(DISTANCE_IDS)


def test_distances_hand_computed(rng):
    schema = default_schema()
    lm = random_landmarks(rng, schema)
    d = compute_distances(lm, schema)
    for did, a, b in schema.entries:
        dx, dy = lm[a][0] - lm[b][0], lm[a][1] - lm[b][1]
        assert d[did] == pytest.approx((dx * dx + dy * dy) ** 0.5, rel=1e-14)


def test_missing_landmark_named():
    schema = default_schema()
    lm = {n: np.zeros(2) for n in schema.landmark_names if n != "nasion"}
    with pytest.raises(ValidationError, match="nasion"):
        compute_distances(lm, schema)


def test_index_examples():
    dist = {d: 50.0 for d in DISTANCE_IDS}
    dist.update(D1=100.0, D2=125.0)
    p = compute_indices(dist)
    assert p["I1"] == 80.0
    assert p["I6"] == 100.0


def test_zero_denominator_names_index():
    dist = {d: 1.0 for d in DISTANCE_IDS}
    dist["D13"] = 0.0
    with pytest.raises(ValidationError, match="I12"):
        compute_indices(dist)


def test_index_table_oracle(rng):
    for _ in range(100):
        dist = {d: float(v) for d, v in zip(DISTANCE_IDS, rng.uniform(1, 300, size=13))}
        p = compute_indices(dist)
        for iid, num, den in FORMULA_TABLE:
            assert abs(p[iid] - 100.0 * dist[f"D{num}"] / dist[f"D{den}"]) <= 1e-12


def test_schema_validation(tmp_path):
    entries = list(default_schema().entries)
    with pytest.raises(ValidationError):
        DistanceSchema(entries[:12])
    with pytest.raises(ValidationError, match="differ"):
        DistanceSchema(entries[:12] + [("D13", "a", "a")])
    bad = tmp_path / "s.json"
    bad.write_text("{nope")
    with pytest.raises(Exception, match="invalid schema JSON"):
        load_schema(bad)


def test_profile_invariants():
    with pytest.raises(ValidationError, match="I3"):
        FacialIndexProfile("x", {i: (0.0 if i == "I3" else 1.0) for i in INDEX_IDS})


def test_quantile_matches_numpy(rng):
    x = rng.normal(size=37)
    for q in (0.0, 0.25, 0.5, 0.75, 1.0):
        assert quantile(x, q) == pytest.approx(np.percentile(x, 100 * q), abs=1e-12)


def test_values_one_to_twelve():
    res = classify_cohort(uniform_cohort(list(range(1, 13))))
    b = res.boundaries["I1"]
    assert (b.q1, b.q3) == (3.75, 9.25)
    core = [res.labels[f"s{k:02d}"]["I1"].core for k in range(12)]
    assert core == ["low"] * 3 + ["middle"] * 6 + ["high"] * 3


def test_all_equal_cohort():
    res = classify_cohort(uniform_cohort([7.0] * 6))
    b = res.boundaries["I4"]
    assert b.iqr == 0.0
    for labels in res.labels.values():
        assert all(l.core == "middle" and not l.outlier and l.band is None for l in labels.values())


def test_cohort_errors():
    with pytest.raises(InsufficientDataError):
        classify_cohort(uniform_cohort([1, 2, 3, 4]))
    with pytest.raises(ValidationError):
        classify_cohort(uniform_cohort([1, 2, 3, 4, 5]), confidence=1.0)


def test_27_subject_partition(rng):
    res = classify_cohort(cohort({i: rng.uniform(10, 90, size=27) for i in INDEX_IDS}))
    for iid in INDEX_IDS:
        assert sum(res.counts(iid).values()) == 27


def test_outlier_flag():
    res = classify_cohort(uniform_cohort([10, 11, 12, 13, 14, 15, 100]))
    assert res.labels["s06"]["I1"].outlier
    assert res.labels["s06"]["I1"].core == "high"
    assert not any(res.labels[f"s{k:02d}"]["I1"].outlier for k in range(6))


def test_bands_only_inside_intervals(rng):
    vals = rng.normal(50, 10, size=27)
    res = classify_cohort(uniform_cohort(vals), confidence=0.8)
    b = res.boundaries["I1"]
    assert b.q1_interval[0] <= b.q1 <= b.q1_interval[1]
    banded = 0
    for k, v in enumerate(vals):
        lab = res.labels[f"s{k:02d}"]["I1"]
        if lab.band == "low-to-middle":
            assert b.q1_interval[0] <= v <= b.q1_interval[1]
        elif lab.band == "middle-to-high":
            assert b.q3_interval[0] <= v <= b.q3_interval[1]
        banded += lab.band is not None
    assert banded > 0


def test_bootstrap_deterministic(rng):
    vals = rng.normal(size=20)
    assert index_boundaries(vals, seed=5) == index_boundaries(vals, seed=5)
    assert index_boundaries(vals, seed=5) == index_boundaries(vals[::-1], seed=5)


values27 = st.lists(st.floats(1.0, 1000.0, allow_nan=False), min_size=5, max_size=27)


@settings(max_examples=30, deadline=None)
@given(values27, st.randoms(use_true_random=False))
def test_permutation_invariance(values, rnd):
    perm = list(range(len(values)))
    rnd.shuffle(perm)
    a = classify_cohort(uniform_cohort(values), n_boot=200)
    b = classify_cohort(uniform_cohort([values[p] for p in perm]), n_boot=200)
    for new_pos, old_pos in enumerate(perm):
        assert b.labels[f"s{new_pos:02d}"] == a.labels[f"s{old_pos:02d}"]


@settings(max_examples=30, deadline=None)
@given(values27, st.integers(0, 26), st.floats(0.0, 500.0))
def test_monotone_core_class(values, who, bump):
    who = who % len(values)
    order = {"low": 0, "middle": 1, "high": 2}
    before = classify_cohort(uniform_cohort(values), n_boot=10).labels[f"s{who:02d}"]["I1"].core
    raised = list(values)
    raised[who] += bump
    after = classify_cohort(uniform_cohort(raised), n_boot=10).labels[f"s{who:02d}"]["I1"].core
    assert order[after] >= order[before]


@settings(max_examples=30, deadline=None)
@given(values27)
def test_fences_and_oracle(values):
    res = classify_cohort(uniform_cohort(values), n_boot=10)
    core, out = oracle_labels(values)
    b = res.boundaries["I1"]
    for k, v in enumerate(values):
        lab = res.labels[f"s{k:02d}"]["I1"]
        assert lab.core == core[k]
        assert lab.outlier == out[k] == (v < b.lower_fence or v > b.upper_fence)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.01, 100.0))
def test_scale_invariance(seed, s):
    schema = default_schema()
    lm = random_landmarks(np.random.default_rng(seed), schema)
    a = profile_from_landmarks(lm, schema)
    b = profile_from_landmarks({k: s * v for k, v in lm.items()}, schema)
    # arbitrary point clouds can give very large ratios, so bound relative error
    for iid in INDEX_IDS:
        assert abs(a[iid] - b[iid]) <= 1e-14 * abs(a[iid])
