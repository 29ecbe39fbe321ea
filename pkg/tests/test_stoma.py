import numpy as np
import pytest

import narrowplan.stoma as stoma_mod
from narrowplan.environment import Scene
from narrowplan.gp import build_gp, gp_cost_grad, line_states
from narrowplan.kinematics import make_arm
from narrowplan.objective import ObjectiveContext, check_stuck, evaluate, obs_grad
from narrowplan.stoma import MomentState, StomaConfig, sample_sg, step_scales, stoma_run, update_moments

from scenes import RHO, random_context, trap_context, trap_start


def test_bias_correction_exact_at_first_step():
    g = np.array([0.3, -2.0, 5.5])
    ms = update_moments(MomentState.zeros(3), g, 0.9)
    np.testing.assert_allclose(ms.corrected, g * g, rtol=4 * np.finfo(float).eps, atol=0)
    assert ms.k == 1


def test_constant_gradient_is_fixed_point():
    g = np.array([1.5, -0.25, 3.0])
    ms = MomentState.zeros(3)
    for _ in range(30):
        ms = update_moments(ms, g, 0.9)
        np.testing.assert_allclose(ms.corrected, g * g, rtol=1e-14)


def test_two_step_hand_value():
    ms = update_moments(update_moments(MomentState.zeros(1), [1.0], 0.9), [2.0], 0.9)
    assert ms.corrected[0] == pytest.approx(0.49 / 0.19, rel=1e-14)
    assert ms.corrected[0] == pytest.approx(2.5789, abs=1e-4)


def test_update_rejects_shape_mismatch():
    with pytest.raises(ValueError):
        update_moments(MomentState.zeros(2), [1.0, 2.0, 3.0], 0.9)


def test_step_scales_band_and_ordering():
    ms = update_moments(MomentState.zeros(3), [0.1, 1.0, 10.0], 0.9)
    for k in (1, 2, 5, 40):
        alpha = 2.0 / (k + 1)
        b, lam = step_scales(ms, 0.4, alpha)
        assert 1.0 <= lam / b.min() <= 1.0 + alpha / 4
    b, _ = step_scales(ms, 0.4, 1.0)
    # larger second moments give smaller aggregated steps
    assert b[0] > b[1] > b[2]


def empty_context():
    arm = make_arm([0.5, 0.4, 0.3])
    s, g = line_states([0.0, 0.5, -0.5], [1.0, -0.5, 0.5], 7.0)
    return ObjectiveContext(arm, Scene(), build_gp(s, g, 6, 7.0), 4)


def test_sg_in_empty_scene_is_scaled_prior_gradient():
    ctx = empty_context()
    rng = np.random.default_rng(0)
    traj = ctx.gp.mean.with_flat(ctx.gp.mean.flat() + 0.2 * rng.standard_normal(ctx.gp.mean.flat().size))
    _, g_gp = gp_cost_grad(ctx.gp, traj)
    for _ in range(20):
        grad, stuck, draw = sample_sg(ctx, traj, RHO, rng)
        assert draw.rho_hat >= RHO
        np.testing.assert_allclose(grad, draw.rho_hat * g_gp, rtol=1e-12, atol=1e-15)
        assert not stuck.is_stuck


def test_sg_without_randomness_is_deterministic_gradient():
    ctx, traj = random_context(3, n_ip=0)
    cfg = StomaConfig(phi_tol_range=(180.0, 180.0), N_ip_max=0)
    grad, _, draw = sample_sg(ctx, traj, RHO, np.random.default_rng(1), cfg)
    _, g_gp = gp_cost_grad(ctx.gp, traj)
    np.testing.assert_allclose(grad, draw.rho_hat * g_gp + obs_grad(ctx, traj), rtol=1e-12, atol=1e-14)


def test_time_scale_expectation_matches_enumeration():
    ctx, traj = random_context(11, n_support=1, n_ip=3)
    spec_grads = {}
    for a in range(4):
        for b in range(4):
            spec_grads[(a, b)] = obs_grad(ctx, traj, (a, b))
    expect = np.mean(list(spec_grads.values()), axis=0)
    assert np.linalg.norm(expect) > 0
    cfg = StomaConfig(phi_tol_range=(180.0, 180.0))
    rng = np.random.default_rng(2)
    _, g_gp = gp_cost_grad(ctx.gp, traj)
    total = np.zeros_like(expect)
    draws = 10_000
    for _ in range(draws):
        grad, _, draw = sample_sg(ctx, traj, RHO, rng, cfg)
        total += grad - draw.rho_hat * g_gp
    assert np.linalg.norm(total / draws - expect) / np.linalg.norm(expect) < 0.05


def test_not_stuck_input_returns_immediately():
    ctx = empty_context()
    res = stoma_run(ctx, ctx.gp.mean, None, RHO, StomaConfig(), np.random.default_rng(0))
    assert res.status == "unstuck"
    assert res.steps == 0 and res.restarts == 0


def test_trap_run_logs_band_and_monotone_best():
    ctx = trap_context()
    res = stoma_run(ctx, trap_start(ctx, 0), None, RHO, StomaConfig(), np.random.default_rng(0))
    assert res.status == "unstuck"
    assert not check_stuck(ctx, res.trajectory).is_stuck
    steps = [e for e in res.trace if e["event"] == "step" and "lam" in e]
    assert steps
    for e in steps:
        assert 1.0 <= e["lam"] / e["b_min"] <= 1.0 + e["alpha"] / 4 + 1e-15
    assert all(b <= a for a, b in zip(res.best_costs, res.best_costs[1:]))


def test_restart_picks_cheapest_candidate(monkeypatch):
    ctx = trap_context()
    traj = trap_start(ctx, 1)
    drawn = []
    real_sample = stoma_mod.sample

    def spy(gp, count, rng, boundary=None):
        out = real_sample(gp, count, rng, boundary)
        drawn.append(out)
        return out

    monkeypatch.setattr(stoma_mod, "sample", spy)
    res = stoma_run(ctx, traj, None, RHO, StomaConfig(K=12), np.random.default_rng(3))
    first = next(e for e in res.trace if e["event"] == "restart")
    assert len(drawn[0]) == 12
    costs = [evaluate(ctx, traj, RHO).cost] + [evaluate(ctx, c, RHO).cost for c in drawn[0]]
    assert len(costs) == 13
    assert first["pick"] == int(np.argmin(costs))
    assert first["cost"] == pytest.approx(min(costs))


def test_seeded_runs_are_identical():
    ctx = trap_context()
    traj = trap_start(ctx, 2)
    a = stoma_run(ctx, traj, None, RHO, StomaConfig(), np.random.default_rng(7))
    b = stoma_run(ctx, traj, None, RHO, StomaConfig(), np.random.default_rng(7))
    assert a.trace == b.trace
    np.testing.assert_array_equal(a.trajectory.states, b.trajectory.states)


def test_cap_reached_returns_best():
    ctx = trap_context()
    traj = trap_start(ctx, 0)
    cfg = StomaConfig(N_rsg=1, N_lo=1, N_up=1, K=1)
    res = stoma_run(ctx, traj, None, RHO, cfg, np.random.default_rng(0), exit_when="collision-free")
    if res.status == "cap-reached":
        assert res.cost == pytest.approx(min(res.best_costs))
        assert res.restarts == 1


@pytest.mark.parametrize(
    "kwargs", [dict(delta=0.0), dict(gamma=1.0), dict(K=0), dict(N_lo=60, N_up=50), dict(phi_tol_range=(0.0, 90.0))]
)
def test_config_validation(kwargs):
    with pytest.raises(ValueError):
        StomaConfig(**kwargs)


def test_run_rejects_bad_arguments():
    ctx = empty_context()
    with pytest.raises(ValueError):
        stoma_run(ctx, ctx.gp.mean, None, 0.0)
    with pytest.raises(ValueError):
        stoma_run(ctx, ctx.gp.mean, None, RHO, exit_when="never")
