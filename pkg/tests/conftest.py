import numpy as np
import pytest

from morphfit.meshio import LandmarkMapping, Mesh
from morphfit.morphable import build_model


def random_corpus(rng, n=20, N=200, with_faces=True):
    base = rng.normal(size=(N, 3))
    faces = np.array([[i, i + 1, i + 2] for i in range(0, N - 2, 3)]) if with_faces else None
    return [Mesh(base + 0.1 * rng.normal(size=(N, 3)), faces) for _ in range(n)]


def random_affine_camera(rng, scale=200.0):
    from morphfit.camerafit import CameraMatrix

    P = np.zeros((3, 4))
    P[:2, :3] = scale * rng.normal(size=(2, 3))
    P[:2, 3] = rng.uniform(0, 640, size=2)
    P[2, 3] = 1.0
    return CameraMatrix(P)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_model(rng):
    return build_model(random_corpus(rng, n=12, N=60))


@pytest.fixture
def small_mapping():
    return LandmarkMapping({f"lm{k}": 5 * k for k in range(12)})


def run_pipeline(root, extra=("--no-timestamp",)):
    """synth -> build-model -> fit -> metrics -> classify -> evaluate inside ``root``.

    Returns the evaluation output directory.
    """
    import json

    from morphfit.cli import main

    subjects = [
        {"subject_id": "lo", "mouth_height_scale": 0.8, "noise_seed": 1},
        {"subject_id": "mid", "mouth_height_scale": 1.0, "noise_seed": 2},
        {"subject_id": "hi", "mouth_height_scale": 1.4, "noise_seed": 3},
        {"subject_id": "w1", "mouth_width_scale": 1.2, "noise_seed": 4},
        {"subject_id": "w2", "mouth_width_scale": 0.9, "noise_seed": 5},
    ]
    (root / "spec.json").write_text(json.dumps({"subjects": subjects}))
    syn = root / "syn"
    sentences = "bin_blue_at_f_two_now,place_red_in_b_nine_soon"

    def ok(*argv):
        assert main([*argv, *extra]) == 0, argv

    ok("synth", "--spec", str(root / "spec.json"), "--poses", "10", "--frames", "16",
       "--sentences", sentences, "--out", str(syn))
    for s in subjects:
        sid = s["subject_id"]
        ok("build-model", "--meshes", str(syn / sid / "poses"), "--out", str(root / f"{sid}.model"))
    ok("fit", "--model", str(root / "lo.model"), "--mapping", str(syn / "mapping.json"),
       "--track", str(syn / "lo" / "tracks" / "bin_blue_at_f_two_now.csv"), "--out", str(root / "fit.csv"))
    ok("metrics", *[a for s in subjects for a in ("--landmarks", str(syn / "neutral" / f"{s['subject_id']}.csv"))],
       "--out", str(root / "indices.csv"))
    ok("classify", "--indices", str(root / "indices.csv"), "--out", str(root / "classes.csv"))
    config = {
        "sources": [{"subject": "lo", "class": "low",
                     "tracks": [f"syn/lo/tracks/{x}.csv" for x in sentences.split(",")]}],
        "targets": [{"subject": s["subject_id"], "class": "low" if s["subject_id"] == "lo" else "other",
                     "model": f"{s['subject_id']}.model"} for s in subjects],
        "mapping": "syn/mapping.json",
        "fit": {"sigma2d": 9.0, "alternations": 3},
        "ttest": "welch",
        "output_dir": "eval",
    }
    (root / "experiment.json").write_text(json.dumps(config))
    ok("evaluate", "--config", str(root / "experiment.json"))
    return root / "eval"


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
