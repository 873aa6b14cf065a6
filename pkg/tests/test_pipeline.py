import numpy as np
import pytest

from spinphoton.config import ideal_config, imperfect_config
from spinphoton.pipeline import Z_RUNS, analyze, reproduce, simulate


@pytest.fixture(scope="module")
def ideal_report():
    cfg = ideal_config(n_frames=300_000, seed=1)
    return analyze(simulate(cfg, write=False), cfg)


@pytest.mark.slow
def test_ideal_dataset_saturates_bound(ideal_report):
    assert ideal_report["fidelity_bound"]["raw"]["value"] >= 0.99
    assert ideal_report["fidelity_bound"]["corrected"]["value"] >= 0.99


@pytest.mark.slow
def test_ideal_initialization_correlations(ideal_report):
    raw = ideal_report["x_basis"]["raw"]
    assert raw["x+|H"]["value"] >= 0.98
    assert raw["x-|V"]["value"] >= 0.98
    assert raw["x-|H"]["value"] <= 0.01


@pytest.mark.slow
def test_imperfect_contrast_in_expected_band():
    # every imperfection on: off-resonant driving, 48 ps jitter, 5% leak, imperfect pumping
    cfg = imperfect_config(n_frames=500_000, seed=1)
    streams = simulate(cfg, scenarios=list(Z_RUNS), write=False)
    report = analyze(streams, cfg)
    fit = report["z_basis"]["fringes"]["sigma+"]
    contrast = fit["contrast"]
    assert 0.30 <= contrast <= 0.50, f"contrast {contrast:.3f} +- {fit['error']:.3f}"


def test_reproduce_is_deterministic():
    a = reproduce(n_frames=3000, seed=3)
    b = reproduce(n_frames=3000, seed=3)
    assert a["comparison"] == b["comparison"]
    quantities = [r["quantity"] for r in a["comparison"]]
    assert any("fidelity" in q for q in quantities)
    assert {"ideal", "imperfect"} <= set(a["columns"])


def test_scenario_streams_are_independent():
    cfg = ideal_config(n_frames=2000, seed=1)
    s = simulate(cfg, scenarios=list(Z_RUNS), write=False)
    a, b = (s[k] for k in Z_RUNS)
    assert len(a) != len(b) or not np.array_equal(a.time, b.time)
