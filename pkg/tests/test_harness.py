import json

import numpy as np
import pytest

from kinwave import io
from kinwave.dispersion import build_dispersion, couplings_nn
from kinwave.errors import ConfigError
from kinwave.harness import (
    CriterionResult,
    DEFAULT_OBSERVABLES,
    DEFAULT_STUDY,
    StudyConfig,
    _eps_seed,
    _load_stage,
    free_flight_check,
    gaussian_bump,
    mean_inverse_mass_sq,
    substitution_gap_exact,
)
from kinwave.initial import WKBPacket
from kinwave.lattice import sample_disorder
from kinwave.wigner import Observable

C = couplings_nn(1.0)


def test_default_study_is_admissible():
    grid = build_dispersion(DEFAULT_STUDY.couplings, 8)
    DEFAULT_STUDY.validate(grid.max_group_speed)
    assert DEFAULT_STUDY.epsilons == (0.5, 0.25, 0.125)


def test_study_validation_errors():
    grid = build_dispersion(C, 8)
    good = dict(couplings=C)
    StudyConfig(**good).validate(grid.max_group_speed)

    with pytest.raises(ConfigError):
        StudyConfig(**good, epsilons=(0.25, 0.5, 0.125)).validate(grid.max_group_speed)
    with pytest.raises(ConfigError):
        StudyConfig(**good, epsilons=(0.5, 0.25), box_sizes=(64,)).validate(
            grid.max_group_speed)
    with pytest.raises(ConfigError):
        StudyConfig(**good, distribution="gaussian").validate(grid.max_group_speed)
    with pytest.raises(ConfigError):
        StudyConfig(**good, realizations=1).validate(grid.max_group_speed)
    with pytest.raises(ConfigError):
        # rademacher needs eps < 1
        StudyConfig(**good, epsilons=(1.5, 0.5), box_sizes=(64, 64)).validate(
            grid.max_group_speed)
    with pytest.raises(ConfigError):
        # wrap-around guard: tiny box cannot hold the flight distance
        StudyConfig(**good, box_sizes=(4, 4, 4)).validate(grid.max_group_speed)
    with pytest.raises(ConfigError):
        # observable set must anchor the mass channel
        StudyConfig(**good, observables=(
            Observable(p=(0.5, 0.0, 0.0), n=(0, 0, 0)),)).validate(
            grid.max_group_speed)


def test_observable_set_has_the_anchor():
    assert any(o.p == (0.0, 0.0, 0.0) and o.n == (0, 0, 0)
               for o in DEFAULT_OBSERVABLES)
    assert len(DEFAULT_OBSERVABLES) == 12


def test_config_hash_stable_under_field_order():
    obj = DEFAULT_STUDY.to_obj()
    scrambled = dict(reversed(list(obj.items())))
    assert io.config_hash(obj) == io.config_hash(scrambled)


def test_eps_seed_lanes_distinct():
    seeds = [_eps_seed(7, i) for i in range(60)]
    assert len(set(seeds)) == len(seeds)
    assert _eps_seed(8, 0) not in seeds


def test_load_stage_rejects_other_configs(tmp_path):
    path = tmp_path / "stage.json"
    io.write_json(path, {"config_hash": "aaaa", "value": 1})
    assert _load_stage(path, "aaaa") == {"config_hash": "aaaa", "value": 1}
    assert _load_stage(path, "bbbb") is None
    assert _load_stage(tmp_path / "missing.json", "aaaa") is None


def test_gaussian_bump():
    x = np.zeros((2, 3))
    x[1] = [1.0, 0.0, 0.0]
    vals = gaussian_bump(x)
    assert vals[0] == 1.0
    assert vals[1] == pytest.approx(np.exp(-0.5))


def test_mean_inverse_mass_sq_closed_forms():
    # rademacher: (1/2)[(1+s)^-2 + (1-s)^-2] = (1+eps)/(1-eps)^2, s = sqrt(eps)
    for eps in (0.5, 0.25, 0.125):
        s = np.sqrt(eps)
        direct = 0.5 * ((1 + s) ** -2 + (1 - s) ** -2)
        assert mean_inverse_mass_sq("rademacher", eps) == pytest.approx(direct)
    # uniform on [-sqrt(3), sqrt(3)]: integral gives 1/(1 - 3 eps)
    eps = 0.2
    xs = np.linspace(-np.sqrt(3), np.sqrt(3), 2_000_001)
    direct = np.mean((1 + np.sqrt(eps) * xs) ** -2)
    assert mean_inverse_mass_sq("uniform", eps) == pytest.approx(direct, rel=1e-4)
    with pytest.raises(ConfigError):
        mean_inverse_mass_sq("rademacher", 1.0)
    with pytest.raises(ConfigError):
        mean_inverse_mass_sq("gaussian", 0.1)


def test_substitution_gap_matches_monte_carlo():
    """The closed-form disorder mean of the time-zero pairing gap agrees
    with a direct average over sampled disorder fields."""
    packet = WKBPacket(k0=(0.125, 0.0, 0.0), sigma=0.5)
    L, eps = 16, 0.25
    gap, ref = substitution_gap_exact(packet, C, L, eps, "rademacher")
    assert ref > 0.0

    from kinwave.lattice import from_wavefunction, signed_axis
    from kinwave.wigner import energy_density_pairing, initial_wavefunction

    psi = initial_wavefunction(packet, L, eps)
    state = from_wavefunction(psi, C)        # substitution data, no disorder
    samples = []
    for r in range(40):
        d = sample_disorder(L, "rademacher", seed=(123, r))
        e = energy_density_pairing(state, d, eps, C, gaussian_bump)
        samples.append(e - ref)
    mc = np.mean(samples)
    se = np.std(samples, ddof=1) / np.sqrt(len(samples))
    assert abs(mc - gap) <= 4.0 * se + 1e-12


def test_substitution_gap_decays_linearly():
    # signed mean self-averages the xi-linear term, so the gap is O(eps)
    packet = WKBPacket(k0=(0.125, 0.0, 0.0), sigma=0.5)
    gaps = [substitution_gap_exact(packet, C, 32, eps, "rademacher")[0]
            for eps in (0.5, 0.25, 0.125)]
    assert gaps[0] > gaps[1] > gaps[2] > 0.0
    assert gaps[0] / gaps[1] > 1.6
    assert gaps[1] / gaps[2] > 1.6


def test_free_flight_sigma_mismatch():
    with pytest.raises(ConfigError):
        free_flight_check(sigmas=(1.0,), epsilons=(0.25, 0.125))


def test_criterion_result_line():
    r = CriterionResult(3, "something quantitative", True, {})
    assert r.line() == "criterion  3 [PASS] something quantitative"
    r2 = CriterionResult(12, "other", False, {})
    assert r2.line() == "criterion 12 [FAIL] other"


def test_run_acceptance_summary_shape(tmp_path, monkeypatch):
    # Plumbing only: stub the runners so the summary contract is cheap to check.
    # The real criteria run in tests/test_acceptance.py.
    from kinwave import harness

    stubs = {cid: (lambda cid=cid: CriterionResult(cid, f"stub {cid}", True, {}))
             for cid in range(1, 12)}
    monkeypatch.setattr(harness, "CRITERION_RUNNERS", stubs)
    monkeypatch.setattr(harness, "run_convergence", lambda cfg, out_dir=None: "rep")
    monkeypatch.setattr(
        harness, "energy_transport_check",
        lambda cfg, report=None, out_dir=None: "tr")
    monkeypatch.setattr(
        harness, "criterion_12",
        lambda report=None, out_dir=None: CriterionResult(12, "stub 12", True, {}))
    monkeypatch.setattr(
        harness, "criterion_13",
        lambda transport=None, report=None: CriterionResult(13, "stub 13", False,
                                                            {"why": "stub"}))

    summary = harness.run_acceptance(out_dir=tmp_path)

    assert [row["id"] for row in summary["criteria"]] == list(range(1, 14))
    assert all(set(row) == {"id", "name", "passed", "detail"}
               for row in summary["criteria"])
    assert summary["all_passed"] is False
    assert summary["master_seed"] == DEFAULT_STUDY.master_seed
    assert len(summary["config_hash"]) == 64

    on_disk = json.loads((tmp_path / "summary.json").read_text())
    assert on_disk == json.loads(json.dumps(summary))
