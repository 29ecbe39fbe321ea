import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from narrowplan.environment import Box, Circle, Scene, collision_cost
from narrowplan.gp import build_gp, gp_cost_grad, line_states
from narrowplan.kinematics import ArmModel, Ccb, make_arm
from narrowplan.objective import (
    ObjectiveContext,
    ball_gradients,
    check_stuck,
    evaluate,
    fd_gradient,
    frozen_cost,
    obs_cost,
    obs_grad,
    total_cost_grad,
)

from scenes import RHO, random_context, trap_context, trap_start


def static_context(arm, scene, q, n_support=3, n_ip=4):
    """Prior whose mean holds the arm still at ``q``."""
    s, g = line_states(q, q, 4.0)
    return ObjectiveContext(arm, scene, build_gp(s, g, n_support, 4.0), n_ip)


def one_link(balls):
    return ArmModel((1.0,), tuple(Ccb(0, f, 0.05) for f in balls))


# the straight one-link arm along +x, inner ball pushed down, tip ball pushed up
OPPOSED = Scene((Circle((0.5, 0.14), 0.05), Circle((1.0, -0.14), 0.05)), epsilon=0.1)
# a single slab above the link touching both balls from the same side
ALIGNED = Scene((Box((0.3, 0.09), (1.2, 0.3)),), epsilon=0.1)


def rel_err(a, b):
    return np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-12)


# ------------------------------------------------------------------ obs_cost


def test_empty_scene_cost_and_gradient():
    ctx, traj = random_context(0)
    ctx = ObjectiveContext(ctx.arm, Scene(), ctx.gp, ctx.n_ip)
    assert obs_cost(ctx, traj) == 0.0
    np.testing.assert_array_equal(obs_grad(ctx, traj), 0.0)


def test_cost_grows_with_epsilon():
    arm = make_arm([0.5, 0.5], fractions=(0.5, 1.0))
    costs = []
    for eps in (0.05, 0.1, 0.2):
        scene = Scene((Circle((0.5, 0.0), 1.5),), epsilon=eps)
        ctx, _ = static_context(arm, scene, [0.1, 0.2]), None
        costs.append(obs_cost(ctx, ctx.gp.mean))
    assert costs[0] > 0 and costs[0] < costs[1] < costs[2]


def test_single_ball_hand_computation():
    arm = ArmModel((1.0,), (Ccb(0, 1.0, 0.05),))
    circle = Circle((np.cos(0.3), np.sin(0.3) + 0.12), 0.1)
    scene = Scene((circle,), epsilon=0.1)
    s, g = line_states([0.2], [0.4], 2.0)
    ctx = ObjectiveContext(arm, scene, build_gp(s, g, 1, 2.0), 0)
    traj = ctx.gp.mean
    expect = 0.0
    for q, dq in traj.states:
        p = np.array([np.cos(q), np.sin(q)])
        d = np.linalg.norm(p - circle.center) - circle.radius - 0.05
        c, _ = collision_cost(d, 0.1)
        expect += c * max(abs(dq), 1e-3)
    assert expect > 0
    assert obs_cost(ctx, traj) == pytest.approx(expect, abs=1e-10)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(0, 4))
def test_denser_spec_is_conservative(seed, k):
    ctx, traj = random_context(seed)
    coarse = [k] * (ctx.gp.n_support + 1)
    dense = [2 * k + 1] * (ctx.gp.n_support + 1)
    if obs_cost(ctx, traj, coarse) > 0:
        assert obs_cost(ctx, traj, dense) > 0


# ------------------------------------------------------------------ gradients


@pytest.mark.parametrize("seed", range(20))
def test_gradient_matches_frozen_fd(seed):
    ctx, traj = random_context(seed)
    g = total_cost_grad(ctx, traj, RHO)[1]
    assert rel_err(g, fd_gradient(ctx, traj, RHO)) < 1e-4


def test_obs_grad_matches_frozen_fd():
    ctx, traj = random_context(4)
    assert obs_cost(ctx, traj) > 0
    tiny = 1e-12  # leaves only the obstacle part of the frozen cost
    fd = fd_gradient(ctx, traj, tiny) - tiny * gp_cost_grad(ctx.gp, traj)[1]
    assert rel_err(obs_grad(ctx, traj), fd) < 1e-4


def test_frozen_cost_equals_cost_at_reference():
    ctx, traj = random_context(5)
    assert frozen_cost(ctx, traj, traj, RHO) == pytest.approx(evaluate(ctx, traj, RHO).cost, rel=1e-12)


def test_total_cost_at_mean_in_empty_scene():
    ctx, _ = random_context(1)
    ctx = ObjectiveContext(ctx.arm, Scene(), ctx.gp, ctx.n_ip)
    F, g = total_cost_grad(ctx, ctx.gp.mean, RHO)
    assert F == pytest.approx(0.0, abs=1e-14)
    np.testing.assert_allclose(g, 0.0, atol=1e-14)


def test_total_cost_linear_in_rho():
    ctx, traj = random_context(2)
    ctx = ObjectiveContext(ctx.arm, Scene(), ctx.gp, ctx.n_ip)
    F1, _ = total_cost_grad(ctx, traj, RHO)
    F2, _ = total_cost_grad(ctx, traj, 2 * RHO)
    assert F2 == pytest.approx(2 * F1, rel=1e-12)
    with pytest.raises(ValueError):
        total_cost_grad(ctx, traj, 0.0)


def test_zero_spec_gradient_is_direct_ball_sum():
    ctx, traj = random_context(7)
    spec = [0] * (ctx.gp.n_support + 1)
    g = obs_grad(ctx, traj, spec).reshape(ctx.gp.n_support, -1)
    d = ctx.arm.dof
    for t, row in enumerate(traj.states[1:-1]):
        rep = ball_gradients(ctx, row[:d], row[d:])
        np.testing.assert_allclose(g[t, :d], rep.gradients.sum(axis=0), atol=1e-14)
        np.testing.assert_array_equal(g[t, d:], 0.0)


# ------------------------------------------------------------------ ball reports


def test_one_ball_in_collision():
    arm = one_link((0.5, 1.0))
    scene = Scene((Circle((1.0, -0.14), 0.05),), epsilon=0.1)
    ctx = static_context(arm, scene, [0.0])
    rep = ball_gradients(ctx, [0.0])
    nz = np.flatnonzero(np.linalg.norm(rep.gradients, axis=1))
    assert list(nz) == [1]
    assert np.all(np.isnan(rep.angles))


def test_opposed_balls_are_antiparallel():
    ctx = static_context(one_link((0.5, 1.0)), OPPOSED, [0.0])
    rep = ball_gradients(ctx, [0.0])
    assert rep.gradients[0, 0] > 0 > rep.gradients[1, 0]
    assert rep.angles[1] == pytest.approx(180.0)


def test_prefix_sums_match_direct_summation():
    arm = make_arm([0.5, 0.4, 0.3], fractions=(0.5, 1.0), radius=0.05)
    scene = Scene((Circle((0.45, 0.2), 0.1), Circle((0.95, -0.15), 0.1), Box((1.1, 0.0), (1.3, 0.3))), epsilon=0.1)
    ctx = static_context(arm, scene, [0.0, 0.0, 0.0])
    rng = np.random.default_rng(0)
    for _ in range(5):
        q = rng.normal(0.0, 0.2, 3)
        rep = ball_gradients(ctx, q)
        for k in range(arm.n_balls):
            np.testing.assert_allclose(rep.prefix[k], rep.gradients[: k + 1].sum(axis=0), atol=1e-14)
        for k in range(1, arm.n_balls):
            a, b = rep.gradients[k], rep.prefix[k - 1]
            if np.linalg.norm(a) > 1e-12 and np.linalg.norm(b) > 1e-12:
                cos = a @ b / np.linalg.norm(a) / np.linalg.norm(b)
                assert rep.angles[k] == pytest.approx(np.degrees(np.arccos(np.clip(cos, -1, 1))), abs=1e-6)


def test_rejection_drops_opposing_tip_ball():
    full = static_context(one_link((0.5, 1.0)), OPPOSED, [0.0])
    inner = static_context(one_link((0.5,)), OPPOSED, [0.0])
    traj = full.gp.mean
    kept = obs_grad(full, traj, phi_tol=179.0)
    np.testing.assert_allclose(kept, obs_grad(inner, inner.gp.mean), atol=1e-14)
    assert not np.allclose(obs_grad(full, traj, phi_tol=180.0), kept)
    with pytest.raises(ValueError):
        obs_grad(full, traj, phi_tol=0.0)


# ------------------------------------------------------------------ stuck detection


def test_opposition_is_stuck():
    ctx = static_context(one_link((0.5, 1.0)), OPPOSED, [0.0])
    rep = check_stuck(ctx, ctx.gp.mean, 95.0, 1e-4)
    assert rep.obs_cost > 1e-4
    assert rep.is_stuck and rep.offending
    assert rep.max_angle == pytest.approx(180.0)


def test_aligned_push_is_not_stuck():
    ctx = static_context(one_link((0.5, 1.0)), ALIGNED, [0.0])
    rep = check_stuck(ctx, ctx.gp.mean, 95.0, 1e-4)
    assert rep.obs_cost > 1e-4
    assert not rep.is_stuck
    assert rep.max_angle < 1.0


def test_collision_free_is_never_stuck():
    far = Scene((Circle((0.5, 0.6), 0.05), Circle((1.0, -0.6), 0.05)), epsilon=0.1)
    ctx = static_context(one_link((0.5, 1.0)), far, [0.0])
    assert not check_stuck(ctx, ctx.gp.mean, 5.0, 1e-4).is_stuck


def test_stuck_is_monotone_in_tolerance():
    ctx = trap_context()
    traj = trap_start(ctx, 0)
    flags = [check_stuck(ctx, traj, tol, 1e-4).is_stuck for tol in np.linspace(5, 175, 35)]
    # once it stops being stuck it never becomes stuck again at larger tolerances
    assert flags == sorted(flags, reverse=True)
    assert flags[0]


def test_check_stuck_rejects_bad_tolerance():
    ctx = trap_context()
    with pytest.raises(ValueError):
        check_stuck(ctx, ctx.gp.mean, 180.0)
