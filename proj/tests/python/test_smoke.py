import json
import math

import pytest

import projiql


def test_expectile_two_point_oracle():
    for tau in (0.6, 0.75, 0.9):
        assert abs(projiql.expectile([0.0, 1.0], tau) - tau) < 1e-9


def test_expectile_weights_and_bad_level():
    # Weight 3 on the upper point at tau = 0.5 is the weighted mean.
    assert projiql.expectile([0.0, 1.0], 0.5, weights=[1.0, 3.0]) == pytest.approx(0.75, abs=1e-12)
    with pytest.raises(ValueError):
        projiql.expectile([0.0, 1.0], 1.0)


def test_tau_proj_identical_policy():
    beta = [0.3, 0.8, 1.4]
    r = projiql.tau_proj(beta, beta)
    assert r.coefficient == 1.0
    assert r.per_sample == [0.5, 0.8, 1.0]
    assert r.batch_value == pytest.approx((0.5 + 0.8 + 1.0) / 3)


def test_tau_proj_from_log_matches_linear():
    beta, phi = [0.3, 0.8, 1.4], [0.5, 0.7, 1.1]
    a = projiql.tau_proj(beta, phi)
    b = projiql.tau_proj_from_log([math.log(x) for x in beta], [math.log(x) for x in phi])
    assert b.batch_value == pytest.approx(a.batch_value, abs=1e-12)


def test_sweeps_pass():
    for report in (projiql.sweep_lemma1(20, 1), projiql.sweep_lemma3(20, 2), projiql.sweep_theorem4(10, 3)):
        assert report.passed, report
        assert report.failures == 0


def test_verify_suite_and_fault_injection():
    reports = projiql.verify_suite()
    assert all(r.passed for r in reports if r.gating)
    json.loads(reports[0].to_json())
    faulty = projiql.verify_suite(inject_faults=["lemma1"])
    assert any(not r.passed for r in faulty if r.name.startswith("lemma1"))


def test_config_strict():
    c = projiql.RunConfig.parse("[learner]\nsteps = 50\n")
    assert c.get("learner.steps") == "50"
    with pytest.raises(projiql.ConfigError):
        projiql.RunConfig.parse("[learner]\nnot_a_key = 1\n")
    assert "learner.inverse_temperature" in projiql.known_keys()


def test_gen_data_and_train_tiny(tmp_path, monkeypatch):
    monkeypatch.setenv("PROJIQL_OUT", str(tmp_path))
    c = projiql.RunConfig()
    c.base_dir = str(tmp_path)
    (tmp_path / "maze.txt").write_text("S..\n...\n..G\n")
    for key, value in {
        "env.kind": "gridmaze",
        "env.layout": "maze.txt",
        "data.episodes": "20",
        "data.behavior": "uniform-random",
        "learner.steps": "30",
        "learner.bc_steps": "10",
        "learner.batch_size": "8",
        "learner.bc_batch_size": "8",
        "learner.hidden_width": "8",
        "learner.eval_every": "0",
        "learner.eval_episodes": "2",
        "run.seeds": "0",
    }.items():
        c.set(key, value)
    path = projiql.gen_data(c)
    assert path.exists()
    runs = projiql.train(c)
    assert len(runs) == 1
    taus = [row["tau_proj"] for row in runs[0]["metrics"]]
    assert len(taus) == 30
    assert all(0.5 <= t <= 1.0 for t in taus)
