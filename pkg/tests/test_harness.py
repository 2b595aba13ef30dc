import csv
import io

import numpy as np
import pytest

from robokey.config import ExperimentConfig, derive_seeds, read_config_file
from robokey.control import tracking_control
from robokey.harness import (COLUMNS, rows_to_csv, run_episode, summary_medians, sweep_alpha,
                             sweep_delta_v, tracking_cost)
from robokey.models import diff_drive_step, input_transform_inv, saturate

QUIET = dict(noise_w=0.0, noise_v=0.0)


def test_tracking_cost_examples():
    x = np.array([[0.0, 0.0, 1.0], [1.0, 2.0, 0.0]])
    assert tracking_cost(x, x) == 0
    assert tracking_cost([[0.3, 0.4, 0.0]], [[0.0, 0.0]]) == pytest.approx(0.5)
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=(20, 2)), rng.normal(size=(20, 2))
    assert tracking_cost(b + 2 * (a - b), b) == pytest.approx(2 * tracking_cost(a, b))
    with pytest.raises(ValueError):
        tracking_cost(np.empty((0, 3)), np.empty((0, 2)))


def test_noise_free_small_bias_is_exact():
    res = run_episode(ExperimentConfig(delta_v=0.005, seed=1, **QUIET))
    assert res.metrics["correct_rate"] == 1.0
    assert res.metrics["accept_rate"] == 1.0
    assert res.metrics["eve_disagreement"] == 0.0
    assert res.K_r == res.K_c == res.K and res.keys_verified


def test_protocol_off_matches_plain_tracking():
    cfg = ExperimentConfig(delta_v=0.0, seed=1, **QUIET)
    res = run_episode(cfg)
    assert res.K_c == res.K_r == res.K_a == ""
    assert np.isnan(res.metrics["accept_rate"])
    # independent closed loop with perfect state knowledge
    p, traj, cs = cfg.params, cfg.trajectory, cfg.controller_state
    x = np.zeros(3)
    states = [x]
    for k in range(res.metrics["steps"]):
        u, cs = tracking_control(cs, x, traj(k * p.T), cfg.gains, p)
        x = diff_drive_step(x, saturate(input_transform_inv(u, p), p), p)
        states.append(x)
    np.testing.assert_allclose(res.states, states, atol=1e-9)
    assert res.metrics["J_x"] == pytest.approx(tracking_cost(states[1:], res.refs[1:]), rel=1e-9)


def test_key_length_sets_step_count():
    res = run_episode(ExperimentConfig(seed=2))
    assert res.metrics["steps"] >= 1035
    assert len(res.K) == 345


def test_accepted_mode_reaches_target():
    res = run_episode(ExperimentConfig(seed=2, key_bits=40, stop="accepted"))
    assert len(res.K_c) == len(res.K_r) == 40
    assert res.metrics["steps"] > 120


def test_seed_derivation():
    assert derive_seeds(1, 2, 3) == derive_seeds(1, 2, 3)
    assert len({derive_seeds(1, i, j) for i in range(4) for j in range(4)}) == 16
    cfg = ExperimentConfig(seed=5)
    assert cfg.with_derived_seeds(3, 1).seeds == cfg.with_derived_seeds(0, 1).seeds
    assert cfg.with_derived_seeds(3, 1, common=False).seeds == derive_seeds(5, 3, 1)


def test_sweep_shape_and_determinism():
    cfg = ExperimentConfig(key_bits=9, seed=3)
    rows = sweep_delta_v(cfg, [0.02, 0.03, 0.04], 2)
    assert sum(r["kind"] == "data" for r in rows) == 6
    assert sum(r["kind"] == "summary" for r in rows) == 3
    text = rows_to_csv(rows)
    assert text == rows_to_csv(sweep_delta_v(cfg, [0.02, 0.03, 0.04], 2))
    parsed = list(csv.DictReader(io.StringIO(text)))
    assert tuple(parsed[0]) == COLUMNS
    summary = [r for r in rows if r["kind"] == "summary"][1]
    data = [r["J_x"] for r in rows if r["kind"] == "data" and r["point"] == 1]
    assert summary["J_x"] == pytest.approx(np.median(data))
    assert summary["J_x_min"] == min(data) and summary["J_x_max"] == max(data)


def test_alpha_sweep_zero_anchor():
    rows = sweep_alpha(ExperimentConfig(key_bits=12, seed=3), [0.0, 0.05], 3)
    assert all(r["eve_disagreement"] == 0 for r in rows
               if r["kind"] == "data" and r["alpha"] == 0)
    assert len(summary_medians(rows, "eve_disagreement")) == 2


def test_parallel_sweep_matches_serial():
    cfg = ExperimentConfig(key_bits=6, seed=3)
    assert (rows_to_csv(sweep_delta_v(cfg, [0.02, 0.04], 2, jobs=2))
            == rows_to_csv(sweep_delta_v(cfg, [0.02, 0.04], 2)))


def test_config_flat_round_trip(tmp_path):
    cfg = ExperimentConfig(delta_v=0.0123, seed=77, stop="accepted", perturb_targets="r,D")
    assert ExperimentConfig.from_flat(cfg.to_flat()) == cfg
    assert ExperimentConfig.from_header(cfg.header()).digest_hex() == cfg.digest_hex()
    path = tmp_path / "c.cfg"
    path.write_text("# comment\n\ndelta-v = 0.02\nseed=4\n")
    assert ExperimentConfig.from_flat(read_config_file(path)) == ExperimentConfig(delta_v=0.02, seed=4)
    with pytest.raises(KeyError):
        ExperimentConfig.from_flat({"bogus": "1"})
    tampered = dict(cfg.header(), delta_v="0.5")
    with pytest.raises(ValueError):
        ExperimentConfig.from_header(tampered)
