import math

import pytest

import tdisc


def test_schedules():
    a, s = tdisc.alpha_sigma(tdisc.NoiseSchedule.ot(), 0.5)
    assert (a, s) == (0.5, 0.5)
    a, s = tdisc.alpha_sigma(tdisc.NoiseSchedule.vp(), 1.0)
    assert a * a / (s * s) == pytest.approx(4.7e-3, rel=0.05)
    t, x = tdisc.ve_to_ot(80.0, (0.0, 0.0))
    assert round(t, 3) == 0.988


def test_uniform_decode_and_solve():
    s = tdisc.NoiseSchedule.ot()
    xi = tdisc.decode_heads([0.0] * 4, [0.0] * 4, [0.0] * 4, tdisc.HeadDecoding(), s)
    assert xi.taus == pytest.approx([0.002, 0.2485, 0.495, 0.7415, 0.988])
    uniform = tdisc.heuristic(tdisc.HeuristicKind.Uniform, s, 4)
    assert xi.taus == uniform.taus

    gmm = tdisc.build_tree_mixture()
    assert len(gmm) == 378
    x_t = (0.4, -0.3)
    a = tdisc.solve(tdisc.SolverSpec.euler(), gmm, s, x_t, tdisc.heuristic(tdisc.HeuristicKind.Uniform, s, 100))
    b = tdisc.reference_solve(gmm, s, x_t, 100)
    assert a == b


def test_metrics():
    p = [(0.0, 0.0)] * 50
    q = [(2.0, 0.0)] * 50
    assert tdisc.sliced_wasserstein(p, q) == pytest.approx(2.0 / math.sqrt(2.0), rel=1e-12)
    assert tdisc.kl_divergence(p, p) == 0.0
    assert tdisc.endpoint_mse([(0.0, 0.0)], [(1.0, 1.0)]) == 1.0


def test_config_errors_map_to_value_error():
    with pytest.raises(ValueError):
        tdisc.ExperimentConfig.from_json('{"bogus": 1}')


def test_small_pipeline(tmp_path):
    cfg = tdisc.ExperimentConfig.from_json(
        '{"strategy": {"hidden": 8}, "train": {"teacher_samples": 40,'
        ' "network": {"iterations": 10, "batch": 8}, "raw": {"iterations": 10}}}',
        str(tmp_path),
    )
    assert tdisc.gen_teacher(cfg) == 40
    tdisc.train(cfg, "global", 3)
    tdisc.train(cfg, "instance", 3)
    uniform = tdisc.evaluate(cfg, "uniform", 3)
    glob = tdisc.evaluate(cfg, "global", 3)
    assert glob.mean_mse <= uniform.mean_mse
    assert len(glob.per_sample_errors) == 40
    assert (tmp_path / "out" / "reports" / "global_nfe3.json").exists()


def test_check_grad():
    r = tdisc.check_grad()
    assert r["passed"]
    assert r["max_rel_error"] < 1e-4
