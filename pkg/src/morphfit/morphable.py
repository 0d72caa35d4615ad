"""PCA shape model: mean head, per-component standard deviations, components.

A head is synthesized as ``mean + sum_i alpha_i * sigma_i * v_i`` so the
coefficients are in units of standard deviations.
"""

import io
import logging
import warnings
from dataclasses import dataclass

import numpy as np

from ._io import atomic_write_text, fmt, header_lines
from .errors import DegenerateError, ParseError, ValidationError
from .meshio import Mesh, validate_correspondence

log = logging.getLogger(__name__)

#: components with sigma below this fraction of the leading sigma are dropped
TRUNCATION_RTOL = 1e-12


@dataclass(frozen=True, eq=False)
class MorphableModel:
    mean: np.ndarray
    sigmas: np.ndarray
    components: np.ndarray
    source_count: int
    faces: np.ndarray | None = None

    def __post_init__(self):
        mean = np.array(self.mean, dtype=float).reshape(-1)
        sig = np.array(self.sigmas, dtype=float).reshape(-1)
        comp = np.array(self.components, dtype=float)
        if mean.size % 3 or mean.size == 0:
            raise ValidationError(f"mean length {mean.size} is not a positive multiple of 3")
        if comp.ndim != 2 or comp.shape != (mean.size, sig.size):
            raise ValidationError(
                f"components shape {comp.shape} inconsistent with mean {mean.size} / sigmas {sig.size}"
            )
        if sig.size > max(self.source_count - 1, 0):
            raise ValidationError(f"{sig.size} components exceed source_count - 1 = {self.source_count - 1}")
        if np.any(sig < 0) or np.any(np.diff(sig) > 0):
            raise ValidationError("sigmas must be non-negative and non-increasing")
        for a in (mean, sig, comp):
            if not np.all(np.isfinite(a)):
                raise ValidationError("model contains non-finite values")
            a.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "sigmas", sig)
        object.__setattr__(self, "components", comp)
        if self.faces is not None:
            f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
            f.setflags(write=False)
            object.__setattr__(self, "faces", f)

    @property
    def vertex_count(self):
        return self.mean.size // 3

    @property
    def n_components(self):
        return self.sigmas.size

    def mean_mesh(self):
        return Mesh(self.mean.reshape(-1, 3), self.faces)

    def landmark_basis(self, vertex_indices, K=None):
        """Mean positions ``(m, 3)`` and scaled basis ``(m, 3, K)`` at given vertices.

        ``basis[i, :, j]`` is ``sigma_j * v_j`` restricted to vertex ``i``.
        """
        K = self.n_components if K is None else K
        idx = np.asarray(vertex_indices, dtype=np.int64)
        mean = self.mean.reshape(-1, 3)[idx]
        rows = (3 * idx[:, None] + np.arange(3)).reshape(-1)
        basis = self.components[rows, :K] * self.sigmas[:K]
        return mean, basis.reshape(len(idx), 3, K)


def _fix_signs(components):
    # largest-magnitude entry of every column made non-negative
    pivot = np.argmax(np.abs(components), axis=0)
    signs = np.sign(components[pivot, np.arange(components.shape[1])])
    signs[signs == 0] = 1.0
    return components * signs


def build_model(meshes):
    """PCA over flattened vertex coordinates of a corresponding mesh corpus.

    Uses the sample covariance (divisor ``n - 1``), so ``sigma_i**2`` is the
    sample variance of the training shapes projected on ``v_i``. The
    decomposition is an SVD of the centred data matrix, which never forms the
    ``3N x 3N`` covariance.
    """
    meshes = list(meshes)
    validate_correspondence(meshes)
    n = len(meshes)
    X = np.stack([m.flat() for m in meshes])
    mean = X.mean(axis=0)
    if np.all(X == X[0]):
        # the mean of identical rows can differ from them in the last bit
        mean = X[0].copy()
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    sigmas = s / np.sqrt(n - 1)
    comps = vt.T
    k = min(n - 1, comps.shape[1])
    sigmas, comps = sigmas[:k], comps[:, :k]
    if sigmas[0] == 0.0:
        warnings.warn("degenerate corpus: all meshes identical, every sigma is 0", RuntimeWarning)
        log.warning("event=degenerate_corpus n=%d", n)
        sigmas = np.zeros(k)
    else:
        keep = sigmas >= TRUNCATION_RTOL * sigmas[0]
        if not keep.all():
            log.info("event=truncate kept=%d of=%d", int(keep.sum()), k)
        sigmas, comps = sigmas[keep], comps[:, keep]
    faces = next((m.faces for m in meshes if m.faces is not None), None)
    return MorphableModel(mean, sigmas, _fix_signs(comps), n, faces)


def _check_K(model, K):
    if not 1 <= K <= model.n_components:
        raise ValidationError(f"K={K} outside 1..{model.n_components} (model components)")


def synthesize(model, alpha):
    """Shape ``mean + sum_i alpha_i sigma_i v_i`` as a mesh with the model topology."""
    alpha = np.asarray(alpha, dtype=float).reshape(-1)
    _check_K(model, alpha.size)
    if not np.all(np.isfinite(alpha)):
        raise ValidationError("shape coefficients must be finite")
    K = alpha.size
    offset = model.components[:, :K] @ (model.sigmas[:K] * alpha)
    return Mesh((model.mean + offset).reshape(-1, 3), model.faces)


def project(model, mesh, K=None):
    """Coefficients of the orthogonal projection of ``mesh`` onto the first K components."""
    K = model.n_components if K is None else K
    _check_K(model, K)
    if mesh.vertex_count != model.vertex_count:
        raise ValidationError(f"mesh has {mesh.vertex_count} vertices, model has {model.vertex_count}")
    zero = np.flatnonzero(model.sigmas[:K] <= 0)
    if zero.size:
        raise DegenerateError(f"component {zero[0] + 1} has zero sigma; cannot project")
    return model.components[:, :K].T @ (mesh.flat() - model.mean) / model.sigmas[:K]


# --- persistence -----------------------------------------------------------
#
# line 1: "3N K N n" (K stored components, n source meshes)
# then mean (3N values), sigmas (K), components column-major (3N*K),
# then "faces M" followed by M 0-based index triples. '#' lines are comments.


def format_model(model, header=()):
    out = io.StringIO()
    for line in header:
        out.write(line + "\n")
    three_n, K = model.components.shape
    out.write(f"{three_n} {K} {model.vertex_count} {model.source_count}\n")
    out.write(" ".join(fmt(x) for x in model.mean) + "\n")
    out.write(" ".join(fmt(x) for x in model.sigmas) + "\n")
    for j in range(K):
        out.write(" ".join(fmt(x) for x in model.components[:, j]) + "\n")
    faces = model.faces if model.faces is not None else np.zeros((0, 3), dtype=np.int64)
    out.write(f"faces {len(faces)}\n")
    for i, j, k in faces:
        out.write(f"{i} {j} {k}\n")
    return out.getvalue()


def parse_model(text, path=None):
    tokens = []
    for line in text.splitlines():
        if line.lstrip().startswith("#"):
            continue
        tokens.extend(line.split())
    try:
        three_n, K, N, n = (int(t) for t in tokens[:4])
    except (ValueError, IndexError):
        raise ParseError("model header must be '3N K N n'", path) from None
    if three_n != 3 * N:
        raise ParseError(f"header 3N={three_n} disagrees with N={N}", path)
    pos = 4
    need = three_n + K + three_n * K
    if len(tokens) < pos + need:
        raise ParseError(f"model truncated: need {need} numbers after header", path)
    try:
        nums = np.array(tokens[pos : pos + need], dtype=float)
    except ValueError:
        raise ParseError("non-numeric model entry", path) from None
    pos += need
    mean = nums[:three_n]
    sigmas = nums[three_n : three_n + K]
    comps = nums[three_n + K :].reshape(K, three_n).T
    faces = None
    if pos < len(tokens):
        if tokens[pos] != "faces":
            raise ParseError(f"unexpected token {tokens[pos]!r} after components", path)
        M = int(tokens[pos + 1])
        flat = tokens[pos + 2 : pos + 2 + 3 * M]
        if len(flat) != 3 * M:
            raise ParseError("faces section truncated", path)
        faces = np.array(flat, dtype=np.int64).reshape(M, 3) if M else None
    return MorphableModel(mean, sigmas, comps, n, faces)


def save_model(model, path, header=None):
    atomic_write_text(path, format_model(model, header if header is not None else header_lines(timestamp=False)))


def load_model(path):
    with open(path, encoding="utf-8") as fh:
        return parse_model(fh.read(), path=str(path))
