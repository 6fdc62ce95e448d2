"""Smoke test for the sparbo Python bindings.

Build and install the extension first, e.g.

    pip install maturin
    maturin develop -m crates/python/Cargo.toml

then run `python python/smoke_test.py` from the repository root.
"""

import csv
import io
import math
from pathlib import Path

import sparbo

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def check_field():
    f = sparbo.QualityField([(0.0, 0.0, 0.7, 0.02)])
    assert f.eval((0.0, 0.0)) == 0.7
    assert abs(f.eval((0.02, 0.0)) - 0.7 * math.exp(-1.0)) < 1e-12
    moved = f.transformed(0.01, 0.0, 1.2)
    assert abs(moved.eval((0.01, 0.0)) - 0.84) < 1e-12
    heart = sparbo.QualityField.load(str(CONFIGS / "heart.json"))
    assert len(heart) == 4


def check_gp():
    gp = sparbo.GaussianProcess(noise_variance=1e-8)
    gp.fit([(0.0, 0.0), (0.01, 0.0)], [0.3, -0.2])
    mean, var = gp.posterior((0.0, 0.0))
    assert abs(mean - 0.3) < 1e-5 and var < 1e-6
    mean, var = gp.posterior((1.0, 1.0))
    assert abs(mean) < 1e-12 and abs(var - 1.0) < 1e-12


def check_model():
    reference = sparbo.QualityField([(0.0, 0.0, 0.7, 0.02)])
    model = sparbo.SparModel(reference)
    assert model.theta == (0.0, 0.0, 1.0)
    model.update((0.005, 0.0), 0.5)
    mean, std = model.predict((0.005, 0.0))
    assert 0.0 < std < 1.0 and abs(mean - 0.5) < 0.2
    assert len(model) == 1


def check_acquisition():
    assert sparbo.expected_improvement(0.7, 0.0, 0.5) == 0.7 - 0.5
    assert sparbo.expected_improvement(0.2, 0.0, 0.5) == 0.0
    assert sparbo.ucb(0.5, 0.2, 1.5) == 0.5 + 1.5 * 0.2


def check_session():
    truth = sparbo.QualityField.load(str(CONFIGS / "heart.json")).transformed(0.01, -0.005, 0.9)
    result = sparbo.run_session(str(CONFIGS / "heart.json"), truth, n_max=4)
    assert result["total_observations"] == 16
    locations = {tuple(o["location"]) for o in result["trace"]}
    assert len(locations) == 16
    assert set(result["per_region_best"]) == {"aortic", "pulmonic", "tricuspid", "mitral"}


def check_experiment():
    text = sparbo.run_experiment(str(CONFIGS / "table1.json"), trials=3, seed=1)
    rows = list(csv.DictReader(io.StringIO(text)))
    assert len(rows) == 24
    assert all(int(r["trials"]) == 3 for r in rows)
    assert text == sparbo.run_experiment(str(CONFIGS / "table1.json"), trials=3, seed=1)


if __name__ == "__main__":
    for check in (check_field, check_gp, check_model, check_acquisition, check_session, check_experiment):
        check()
        print(f"ok {check.__name__}")
