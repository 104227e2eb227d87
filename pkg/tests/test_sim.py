import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from regrade import kinem
from regrade.gridmap import SIGMA0_SQ, HeightMap, diff_to_design
from regrade.sim import (DONE, EXPLORE, PLAN, TRANSPORT, ExecState, Robot, SimConfig, Worksite,
                         _exploration_route, blade_cut, coverage_mask, drag_mat_smooth,
                         drop_load, explore, make_crater_site, observe, plan_exploration,
                         relax_repose, run_episode, step_motion)


def flat_site(n=40, res=0.05, z=None):
    truth = HeightMap.flat(n, n, res) if z is None else HeightMap.from_array(z, res)
    return Worksite(truth, HeightMap.unobserved(n, n, res), HeightMap.flat(n, n, res),
                    Robot(0.5, 0.5, 0.0))


def test_no_craters_flat():
    site = make_crater_site()
    assert np.all(site.truth.heights == 0)


def test_crater_depth_and_balance():
    site = make_crater_site(craters=[(2.5, 2.5, 1.0)])
    z = site.truth.heights
    assert -z.min() == pytest.approx(0.2, abs=0.01)
    assert z[z > 0].sum() == pytest.approx(-z[z < 0].sum(), rel=1e-6)


def test_two_craters_balance_each():
    site = make_crater_site(width=8, craters=[(2.0, 2.5, 1.0), (6.0, 2.5, 0.8)])
    z = site.truth.heights
    X, _ = site.truth.centers()
    for side in (X < 4, X >= 4):
        assert z[side].sum() == pytest.approx(0.0, abs=1e-9 * np.abs(z).sum())


def test_crater_validation():
    with pytest.raises(ValueError):
        make_crater_site(craters=[(0.3, 2.5, 1.0)])
    with pytest.raises(ValueError):
        make_crater_site(craters=[(2.0, 2.5, 1.0), (2.6, 2.5, 1.0)])


def test_rim_within_repose():
    z = make_crater_site(craters=[(2.5, 2.5, 1.0)]).truth.heights
    rim = z > 0
    sx = np.abs(np.diff(z, axis=1))[rim[:, 1:] & rim[:, :-1]] / 0.05
    assert sx.max() <= math.tan(math.radians(31)) + 1e-12


def test_exploration_rows():
    site = make_crater_site()
    _, n_rows = _exploration_route(site, 1.0, 0.5, 0.1)
    assert n_rows == 4
    route = plan_exploration(site)
    xy = np.array([(x, y) for x, y, _ in route])
    assert np.all(np.isfinite(xy)) and site.truth.in_bounds(xy[:, 0], xy[:, 1]).all()


def test_wide_spacing_still_covers():
    site = make_crater_site()
    route = plan_exploration(site, spacing=2.5)
    assert coverage_mask(site, route).mean() >= 0.99


def test_full_exploration_observes():
    site = explore(make_crater_site(craters=[(2.5, 2.5, 1.0)]), SimConfig())
    obs = site.belief.observed
    assert obs.mean() >= 0.99
    err = np.abs(site.belief.heights - site.truth.heights)[obs].mean()
    assert err <= 3 * math.sqrt(SIGMA0_SQ)


def test_zero_noise_observation():
    site = make_crater_site(craters=[(2.5, 2.5, 1.0)])
    site = site.replace(robot=Robot(1.5, 2.5, 0.0))
    out = observe(site, noise=False)
    obs = out.belief.observed
    assert obs.any()
    np.testing.assert_allclose(out.belief.heights[obs], site.truth.heights[obs], atol=1e-5)


def test_repeated_observation_variance_nonincreasing():
    site = make_crater_site().replace(robot=Robot(1.5, 2.5, 0.0))
    prev = site.belief.variances.copy()
    for _ in range(5):
        site = observe(site)
        assert np.all(site.belief.variances <= prev)
        prev = site.belief.variances.copy()


def test_dt_zero_no_change():
    site = flat_site()
    traj = kinem.Trajectory([kinem.TrajWaypoint(0.5, 0.5, 0, 1, 0.25, 0.0),
                             kinem.TrajWaypoint(1.5, 0.5, 0, 1, 0.25, 0.0)])
    assert step_motion(site, traj, dt=0) is site


def test_grazing_flat_unchanged():
    site = flat_site()
    traj = kinem.Trajectory([kinem.TrajWaypoint(0.8, 1.0, 0, 1, 0.25, 0.0),
                             kinem.TrajWaypoint(1.8, 1.0, 0, 1, 0.25, 0.0)])
    out = step_motion(site, traj, sense=False)
    np.testing.assert_array_equal(out.truth.heights, site.truth.heights)


def test_pass_over_rim_conserves():
    site = make_crater_site(craters=[(2.5, 2.5, 1.0)])
    site = site.replace(robot=Robot(1.2, 2.5, 0.0))
    traj = kinem.Trajectory([kinem.TrajWaypoint(1.2, 2.5, 0, 1, 0.25, 0.0),
                             kinem.TrajWaypoint(2.3, 2.5, 0, 1, 0.25, 0.0)])
    before = site.material()
    out = drop_load(step_motion(site, traj, sense=False))
    X, Y = site.truth.centers()
    r = np.hypot(X - 2.5, Y - 2.5)
    rim = (site.truth.heights > 0.01) & (np.abs(Y - 2.5) < 0.1) & (X < 2.0)
    assert np.all(out.truth.heights[rim] < site.truth.heights[rim])
    assert out.material() == pytest.approx(before, abs=1e-12)


def test_blade_above_terrain_noop():
    site = flat_site()
    assert blade_cut(site, [0, 1, 2], 0.5) is site


def test_blade_capacity_split():
    z = np.zeros((3, 3))
    z[1, 1] = 0.05
    site = flat_site(3, 0.25, z)
    out = blade_cut(site, [4], 0.0, capacity=0.003, relax=False)
    assert out.robot.carried_volume == pytest.approx(0.003)
    assert out.truth.heights[1, 1] == pytest.approx(0.05 - 0.003 / 0.0625)


def test_cut_then_fill_conserves():
    z = np.zeros((1, 4))
    z[0, 0], z[0, 3] = 0.04, -0.04
    site = flat_site(4, 0.25, np.vstack([z] * 4))
    out = blade_cut(site, [0, 3, 4, 7], 0.0)
    assert out.material() == pytest.approx(site.material(), rel=1e-9, abs=1e-15)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_relax_conserves_and_bounds(seed):
    z = np.random.default_rng(seed).normal(0, 0.05, (12, 12))
    out = relax_repose(z, 0.05)
    assert out.sum() == pytest.approx(z.sum(), abs=1e-12)
    assert out.max() <= z.max() + 1e-12 and out.min() >= z.min() - 1e-12


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_drag_mat_conserves(seed):
    rng = np.random.default_rng(seed)
    z = rng.normal(0, 0.05, (8, 8))
    mask = rng.random((8, 8)) < 0.5
    out = drag_mat_smooth(z, mask)
    assert out.sum() == pytest.approx(z.sum(), abs=1e-12)
    assert np.all(out[~mask] == z[~mask])
    if mask.sum() > 1:
        assert out[mask].var() <= z[mask].var() + 1e-15


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), blade=st.floats(-0.05, 0.05),
       cap=st.floats(1e-5, 0.01), carried=st.floats(0, 0.005))
def test_blade_cut_conserves(seed, blade, cap, carried):
    z = np.random.default_rng(seed).normal(0, 0.03, (6, 6))
    site = flat_site(6, 0.1, z)
    site = site.replace(robot=replace(site.robot, carried_volume=carried))
    out = blade_cut(site, np.arange(0, 36, 3), blade, capacity=cap)
    assert out.material() == pytest.approx(site.material(), abs=1e-12)
    assert out.robot.carried_volume >= 0


def test_state_machine():
    ex = ExecState()
    for m in (PLAN, TRANSPORT, PLAN, TRANSPORT, DONE):
        ex.transition(m)
    assert ex.history == [EXPLORE, PLAN, TRANSPORT, PLAN, TRANSPORT, DONE]
    with pytest.raises(RuntimeError):
        ex.transition(PLAN)
    with pytest.raises(RuntimeError):
        ExecState().transition(TRANSPORT)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig.from_dict({"bogus": 1})
    with pytest.raises(ValueError):
        SimConfig(dt=0)
    with pytest.raises(ValueError):
        SimConfig(window=4)
    assert SimConfig.from_dict({"budget": 3}).budget == 3


def test_worksite_geometry_checked():
    site = flat_site()
    with pytest.raises(ValueError):
        site.replace(design=HeightMap.flat(3, 3, 0.05))


def test_flat_episode_done_immediately():
    rep = run_episode(make_crater_site(), SimConfig(seed=1))
    assert rep.triplets_executed == 0
    assert rep.transitions == [EXPLORE, PLAN, TRANSPORT, DONE]
    assert rep.before.area_oos == 0 and rep.after.area_oos == 0


def test_episode_deterministic_and_conserving():
    cfg = SimConfig(budget=4, seed=2)
    a = run_episode(make_crater_site(craters=[(2.5, 2.5, 1.0)], seed=2), cfg)
    b = run_episode(make_crater_site(craters=[(2.5, 2.5, 1.0)], seed=2), cfg)
    assert a.dumps() == b.dumps()
    assert a.triplets_executed == 4
    assert a.mass_error <= 1e-6
    assert a.transitions[0] == EXPLORE and a.transitions[-1] == DONE


def test_snapshots(tmp_path):
    run_episode(make_crater_site(craters=[(2.5, 2.5, 1.0)]), SimConfig(budget=1),
                snapshot_dir=str(tmp_path), snapshot_every=200)
    assert sorted(p.name for p in tmp_path.iterdir())[0] == "truth_00000.csv"
