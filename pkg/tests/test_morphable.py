import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from morphfit.errors import CorrespondenceError, DegenerateError, ValidationError
from morphfit.meshio import Mesh
from morphfit.morphable import (
    build_model,
    format_model,
    load_model,
    parse_model,
    project,
    save_model,
    synthesize,
)

from conftest import random_corpus


def covariance_oracle(meshes):
    """Brute-force eigendecomposition of the full sample covariance."""
    X = np.stack([m.vertices.ravel() for m in meshes])
    Xc = X - X.mean(axis=0)
    cov = Xc.T @ Xc / (len(meshes) - 1)
    w, V = np.linalg.eigh(cov)
    order = np.argsort(w)[::-1]
    return w[order], V[:, order]


def test_two_meshes_single_component(rng):
    a, b = Mesh(rng.normal(size=(10, 3))), Mesh(rng.normal(size=(10, 3)))
    m = build_model([a, b])
    assert m.n_components == 1
    d = (b.flat() - a.flat()) / np.linalg.norm(b.flat() - a.flat())
    proj = np.array([a.flat() @ d, b.flat() @ d])
    assert m.sigmas[0] ** 2 == pytest.approx(proj.var(ddof=1), rel=1e-12)
    assert abs(m.components[:, 0] @ d) == pytest.approx(1.0, abs=1e-12)


def test_identical_meshes_degenerate(rng):
    v = rng.normal(size=(8, 3))
    with pytest.warns(RuntimeWarning, match="degenerate"):
        m = build_model([Mesh(v), Mesh(v), Mesh(v)])
    assert np.all(m.sigmas == 0)
    assert np.array_equal(m.mean, v.ravel())


def test_correspondence_failure(rng):
    with pytest.raises(CorrespondenceError):
        build_model([Mesh(rng.normal(size=(8, 3))), Mesh(rng.normal(size=(7, 3)))])


def test_matches_eigendecomposition_oracle(rng):
    meshes = random_corpus(rng, n=20, N=200)
    m = build_model(meshes)
    w, V = covariance_oracle(meshes)
    k = m.n_components
    assert k == 19
    np.testing.assert_allclose(m.sigmas**2, w[:k], rtol=1e-9)
    # same subspace, columns equal up to sign
    overlap = np.abs(np.sum(m.components * V[:, :k], axis=0))
    np.testing.assert_allclose(overlap, 1.0, atol=1e-8)


def test_orthonormality_and_energy(rng):
    meshes = random_corpus(rng, n=15, N=100)
    m = build_model(meshes)
    gram = m.components.T @ m.components
    assert np.max(np.abs(gram - np.eye(m.n_components))) <= 1e-8
    X = np.stack([x.flat() for x in meshes])
    total = np.sum((X - X.mean(axis=0)) ** 2) / (len(meshes) - 1)
    assert np.sum(m.sigmas**2) == pytest.approx(total, rel=1e-8)
    assert np.all(np.diff(m.sigmas) <= 0)


def test_sign_convention(rng):
    m = build_model(random_corpus(rng, n=6, N=30))
    pivot = np.argmax(np.abs(m.components), axis=0)
    assert np.all(m.components[pivot, np.arange(m.n_components)] >= 0)


def test_truncates_null_directions(rng):
    base = rng.normal(size=(20, 3))
    d = rng.normal(size=(20, 3))
    meshes = [Mesh(base + t * d) for t in np.linspace(-1, 1, 6)]
    m = build_model(meshes)
    assert m.n_components == 1


def test_synthesize_identity_and_single_term(small_model):
    m = small_model
    zero = synthesize(m, np.zeros(m.n_components))
    assert np.array_equal(zero.flat(), m.mean)
    e1 = np.zeros(3)
    e1[0] = 1.0
    one = synthesize(m, e1)
    np.testing.assert_allclose(one.flat(), m.mean + m.sigmas[0] * m.components[:, 0], rtol=0, atol=1e-14)
    assert one.faces is m.faces or np.array_equal(one.faces, m.faces)


def test_synthesize_dense_sum_oracle(small_model, rng):
    m = small_model
    alpha = rng.uniform(-2, 2, size=5)
    expected = m.mean.copy()
    for i in range(5):
        expected = expected + alpha[i] * m.sigmas[i] * m.components[:, i]
    got = synthesize(m, alpha).flat()
    assert np.linalg.norm(got - expected) <= 1e-12 * np.linalg.norm(expected)


def test_K_out_of_range(small_model):
    with pytest.raises(ValidationError):
        synthesize(small_model, np.zeros(small_model.n_components + 1))
    with pytest.raises(ValidationError):
        project(small_model, small_model.mean_mesh(), 0)


def test_project_round_trip(small_model, rng):
    m = small_model
    assert np.allclose(project(m, m.mean_mesh()), 0.0, atol=1e-12)
    alpha = rng.normal(size=m.n_components)
    np.testing.assert_allclose(project(m, synthesize(m, alpha)), alpha, atol=1e-10)


def test_project_zero_sigma_errors(rng):
    v = rng.normal(size=(4, 3))
    with pytest.warns(RuntimeWarning):
        m = build_model([Mesh(v), Mesh(v)])
    with pytest.raises(DegenerateError, match="component 1"):
        project(m, Mesh(v), 1)


def test_training_reconstruction(rng):
    meshes = random_corpus(rng, n=20, N=200)
    m = build_model(meshes)
    for mesh in meshes:
        rec = synthesize(m, project(m, mesh, m.n_components)).flat()
        assert np.linalg.norm(rec - mesh.flat()) <= 1e-8 * np.linalg.norm(mesh.flat())


@settings(max_examples=25, deadline=None)
@given(
    arrays(np.float64, 4, elements=st.floats(-3, 3)),
    arrays(np.float64, 4, elements=st.floats(-3, 3)),
    st.floats(-2, 2),
    st.floats(-2, 2),
)
def test_linearity_on_centred_shapes(a_coef, b_coef, a, b):
    m = build_model(random_corpus(np.random.default_rng(7), n=8, N=20))

    def centred(alpha):
        return synthesize(m, alpha).flat() - m.mean

    lhs = centred(a * a_coef + b * b_coef)
    rhs = a * centred(a_coef) + b * centred(b_coef)
    np.testing.assert_allclose(lhs, rhs, atol=1e-9)


def test_model_file_round_trip(tmp_path, small_model):
    save_model(small_model, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    assert np.array_equal(back.mean, small_model.mean)
    assert np.array_equal(back.sigmas, small_model.sigmas)
    assert np.array_equal(back.components, small_model.components)
    assert np.array_equal(back.faces, small_model.faces)
    assert back.source_count == small_model.source_count


def test_model_file_header(small_model):
    text = format_model(small_model)
    three_n, K, N, n = map(int, text.splitlines()[0].split())
    assert (three_n, K, N, n) == (180, small_model.n_components, 60, 12)


def test_model_file_errors():
    with pytest.raises(Exception, match="header"):
        parse_model("x y z\n")
    with pytest.raises(Exception, match="truncated"):
        parse_model("6 1 2 2\n0 0 0 0 0 0\n1\n")
