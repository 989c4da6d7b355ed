import dataclasses
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from cran_powermin.errors import ConfigError, DomainError
from cran_powermin.scenario import (CONFIG_DIR_ENV, ChannelStats, ScenarioConfig, TaskSpec,
                                    generate_scenario, load_config, load_scenario,
                                    noise_power, path_loss_gain, save_scenario,
                                    scenario_from_dict, scenario_to_dict, scenarios_equal)


def test_path_loss_at_one_km():
    assert path_loss_gain(1.0) == pytest.approx(10 ** -12.81, rel=1e-12)
    assert path_loss_gain(1.0) == pytest.approx(1.549e-13, rel=1e-3)


def test_path_loss_at_hundred_metres():
    assert path_loss_gain(0.1) == pytest.approx(10 ** -9.05, rel=1e-12)
    assert path_loss_gain(0.1) == pytest.approx(8.913e-10, rel=1e-3)


def test_path_loss_is_decreasing():
    assert path_loss_gain(0.05) > path_loss_gain(0.1) > path_loss_gain(1.0)


@pytest.mark.parametrize("bad", [0.0, -1.0])
def test_path_loss_rejects_nonpositive_distance(bad):
    with pytest.raises(DomainError):
        path_loss_gain(bad)


@pytest.mark.parametrize("psd, bw, expected", [(-150, 2e7, 2e-11), (0, 1, 1e-3), (-150, 1, 1e-18)])
def test_noise_power(psd, bw, expected):
    assert noise_power(psd, bw) == pytest.approx(expected, rel=1e-12)


def test_default_config_matches_reference_parameters():
    sc = generate_scenario(ScenarioConfig(), 0)
    assert (sc.K, sc.S, sc.L, sc.N) == (6, 4, 4, 5)
    r = sc.radio
    assert (r.B, r.C, r.eta, r.upsilon, r.p_active, r.p_sleep, r.p_max) == (
        20e6, 2.0, 0.5, 0.25, 6.8, 4.3, 1.0)
    assert r.sigma2 == pytest.approx(2e-11, rel=1e-12)
    assert all(s.p_static == 2.0 and set(s.chi) == {1.0} for s in sc.servers)
    assert all(t.D == 1.6e6 for t in sc.tasks)
    assert sc.omega == 1.0
    assert np.all((sc.capacity >= 1.0) & (sc.capacity <= 2.0))
    assert np.all((sc.loads >= 0.01) & (sc.loads <= 0.1))


def test_same_seed_gives_identical_scenario():
    cfg = ScenarioConfig(K=3, S=2, L=2, N=4, shadowing_db=8.0)
    a, b = generate_scenario(cfg, 7), generate_scenario(cfg, 7)
    assert scenarios_equal(a, b)
    assert np.array_equal(a.stats.d, b.stats.d)
    assert not scenarios_equal(a, generate_scenario(cfg, 8))


def test_xi2_for_equal_gains():
    stats = ChannelStats.from_gains(np.full((1, 2), 3e-9), 5)
    assert stats.xi2[0] == pytest.approx(1 / (10 * 3e-9), rel=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), K=st.integers(1, 6), S=st.integers(1, 4),
       L=st.integers(1, 4), N=st.integers(1, 8))
def test_generated_instances_respect_ranges_and_invariants(seed, K, S, L, N):
    cfg = ScenarioConfig(K=K, S=S, L=L, N=N)
    sc = generate_scenario(cfg, seed)
    d = sc.stats.d
    assert d.shape == (L, K) and np.all(d > 0)
    assert np.allclose(sc.stats.xi2 * N * d.sum(axis=1), 1.0, rtol=1e-12, atol=0)
    assert sc.efficiency.shape == (S, K) and sc.chi.shape == (S, K)
    for name, values in (("load_range", sc.loads), ("capacity_range", sc.capacity),
                         ("efficiency_range", sc.efficiency)):
        lo, hi = getattr(cfg, name)
        assert np.all((values >= lo) & (values <= hi))
    # UE distances within the disk are bounded by its diameter
    assert np.all(d >= path_loss_gain(2 * cfg.radius_km) * (1 - 1e-12))


def test_tau_split_defaults_to_halves():
    sc = generate_scenario(ScenarioConfig(K=2, S=1, L=1, tau=0.8), 0)
    assert np.allclose(sc.tau_ex, 0.4) and np.allclose(sc.tau_tr, 0.4)


def test_task_budget_split_is_validated():
    with pytest.raises(ConfigError):
        TaskSpec(D=1.0, tau=1.0, L=0.1, tau_ex=0.7, tau_tr=0.7)


@pytest.mark.parametrize("field", ["K", "S", "L"])
def test_empty_lists_are_config_errors(field):
    with pytest.raises(ConfigError):
        generate_scenario(dataclasses.replace(ScenarioConfig(), **{field: 0}), 0)


def test_round_trip_through_file(tmp_path):
    sc = generate_scenario(ScenarioConfig(K=3, S=2, L=2, N=4), 11)
    path = tmp_path / "s.json"
    save_scenario(sc, path)
    assert scenarios_equal(load_scenario(path), sc)
    assert scenarios_equal(scenario_from_dict(json.loads(path.read_text())), sc)


def test_inconsistent_xi2_rejected():
    data = scenario_to_dict(generate_scenario(ScenarioConfig(K=2, S=1, L=1), 0))
    data["stats"]["xi2"] = [v * 2 for v in data["stats"]["xi2"]]
    with pytest.raises(ConfigError):
        scenario_from_dict(data)


def test_config_file_and_env_directory(tmp_path, monkeypatch):
    (tmp_path / "cfg.json").write_text(json.dumps({"K": 2, "S": 1, "L": 1, "N": 2}))
    monkeypatch.setenv(CONFIG_DIR_ENV, str(tmp_path))
    monkeypatch.chdir(tmp_path.parent)
    cfg = load_config("cfg.json")
    assert (cfg.K, cfg.S, cfg.L, cfg.N) == (2, 1, 1, 2)


@pytest.mark.parametrize("text", ["{", "[1, 2]", '{"K": 2, "bogus": 1}', '{"load_range": [1]}'])
def test_malformed_config(tmp_path, text):
    p = tmp_path / "c.json"
    p.write_text(text)
    with pytest.raises(ConfigError):
        load_config(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.json")
