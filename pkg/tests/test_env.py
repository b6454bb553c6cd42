import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from colf import env as E
from colf.env import (
    DONE_COLLISION,
    DONE_HORIZON,
    DONE_NONE,
    ContractError,
    ScenarioConfig,
    VecTransportEnv,
    WorldState,
)


def make_state(leader=(-1.0, -1.0, 0.0), follower=(-1.0, 1.0, 0.0), obj=(0.0, 0.0, 0.0), goals=((2.0, 0.0),),
               goal_index=0, step_index=0):
    g = np.array(goals, dtype=float)[None]
    return WorldState(
        robot_pos=np.array([[leader[:2], follower[:2]]], dtype=float),
        robot_yaw=np.array([[leader[2], follower[2]]], dtype=float),
        robot_twist=np.zeros((1, 2, 3)),
        obj_pos=np.array([obj[:2]], dtype=float),
        obj_yaw=np.array([obj[2]], dtype=float),
        obj_twist=np.zeros((1, 3)),
        goals=g,
        goal_index=np.array([goal_index]),
        step_index=np.array([step_index]),
        terminated=np.zeros(1, dtype=bool),
    )


POINT = ScenarioConfig(goal_mode="point")
CYL = ScenarioConfig(goal_mode="cylinder", goals=((2.0, 0.0),))


# --- scenarios --------------------------------------------------------------------


def test_packaged_scenarios_load():
    names = E.list_scenarios()
    for n in ("one_goal", "two_goal", "train", "desk_train", "desk_one_goal", "desk_two_goal"):
        assert n in names
        assert E.load_scenario(n).name == n


def test_evaluation_scenarios_use_published_layout():
    one, two = E.load_scenario("one_goal"), E.load_scenario("two_goal")
    assert one.leader_box == (-3.0, -2.0, -2.5, -1.0) and one.leader_yaw == (-1.5, -1.5)
    assert one.follower_box == (-3.0, -2.0, 1.0, 2.5) and one.follower_yaw == (1.5, 1.5)
    assert one.goals == ((0.5, 0.0),) and one.goal_mode == "cylinder"
    assert two.goals == ((0.5, -1.5), (0.5, 1.5)) and two.instructed_goal == -1
    assert one.object_half_extents == (0.295, 0.295) and one.object_height == 0.35 and one.object_mass == 11.0
    assert (one.goal_radius, one.goal_height) == (0.3, 0.8)
    assert E.load_scenario("train").goal_mode == "point"


def test_desk_spawns_are_about_one_and_a_half_metres_from_the_box():
    cfg = E.load_scenario("desk_train")
    st_, _ = E.reset(cfg, np.random.default_rng(0), 500)
    d = np.linalg.norm(st_.robot_pos - st_.obj_pos[:, None], axis=-1)
    assert 1.2 < d.mean() < 1.8 and d.max() < 2.0


def test_scenario_from_toml_file(tmp_path):
    p = tmp_path / "s.toml"
    p.write_text('[scenario]\nname = "mine"\ngoal_mode = "cylinder"\ngoals = [[1.0, 2.0]]\n')
    cfg = E.load_scenario(p)
    assert cfg.name == "mine" and cfg.goals == ((1.0, 2.0),)


@pytest.mark.parametrize("bad", [{"goal_mode": "ring"}, {"goals": ()}, {"leader_box": (0, 0, 0, 1)},
                                 {"instructed_goal": 3}, {"push_split": 1.5}])
def test_invalid_scenarios_are_rejected(bad):
    with pytest.raises(ContractError):
        ScenarioConfig(**bad)


def test_unknown_scenario_key_is_rejected():
    with pytest.raises(ContractError):
        ScenarioConfig.from_dict({"goal_mod": "point"})


def test_missing_scenario_is_not_found():
    with pytest.raises(FileNotFoundError):
        E.load_scenario("no_such_scenario")


# --- rewards ----------------------------------------------------------------------


def test_robot_reward_at_contact_and_aligned_is_weight_times_1_2():
    s = make_state(leader=(0.0, 0.0, 0.7), follower=(0.0, 0.0, -2.0))
    r = E.compute_rewards(s, POINT, collided=np.array([False]))
    assert r.r_rob[0, 0] == pytest.approx(3.0, abs=1e-12)
    assert r.r_rob[0, 1] == pytest.approx(3.6, abs=1e-12)


def test_robot_reward_hand_computed():
    # leader 1 m behind the box facing it, follower 2 m to the side facing away
    s = make_state(leader=(-1.0, 0.0, 0.0), follower=(0.0, 2.0, math.pi / 2))
    r = E.compute_rewards(s, POINT, collided=np.array([False]))
    assert r.r_rob[0, 0] == pytest.approx(2.5 * math.exp(-1.0) * 1.2, abs=1e-12)
    assert r.r_rob[0, 1] == pytest.approx(3.0 * math.exp(-2.0) * (math.cos(math.pi) + 0.2), abs=1e-12)


def test_object_reward_and_termination_penalty():
    s = make_state(obj=(0.5, 0.0, 0.0), goals=((2.0, 2.0),))
    r = E.compute_rewards(s, POINT, collided=np.array([True]))
    assert r.r_obj[0] == pytest.approx(6.0 * math.exp(-2.5), abs=1e-12)
    assert r.r_term[0] == -2.0
    ok = E.compute_rewards(s, POINT, collided=np.array([False]))
    assert ok.r_term[0] == 0.0
    np.testing.assert_allclose(ok.total[0], ok.r_rob[0] + ok.r_obj[0])


def test_heading_error_is_signed_bearing():
    th = E.heading_error(np.array([0.0, 0.0]), np.array(0.0), np.array([0.0, 1.0]))
    assert float(th) == pytest.approx(math.pi / 2)


# --- stepping ---------------------------------------------------------------------


def test_zero_action_leaves_world_unchanged():
    s = make_state()
    out = E.step(s, np.zeros((1, 3)), np.zeros((1, 3)), POINT)
    np.testing.assert_array_equal(out.state.obj_pos, s.obj_pos)
    np.testing.assert_array_equal(out.state.robot_pos, s.robot_pos)
    assert out.state.step_index[0] == 1 and not out.done[0]


def test_step_does_not_mutate_input():
    s = make_state(leader=(-0.7, 0.0, 0.0))
    snap = s.copy()
    E.step(s, np.array([[1.0, 0, 0]]), np.zeros((1, 3)), POINT)
    np.testing.assert_array_equal(s.robot_pos, snap.robot_pos)
    np.testing.assert_array_equal(s.obj_pos, snap.obj_pos)


def test_actions_are_clipped_to_limits():
    s = make_state(leader=(-5.0, -5.0, 0.0), follower=(5.0, 5.0, 0.0))
    out = E.step(s, np.array([[9.0, 0, 4.0]]), np.array([[-9.0, 0, 0]]), POINT)
    np.testing.assert_allclose(out.state.robot_twist[0, 0], [1.0, 0.0, 1.0])
    assert out.state.robot_yaw[0, 0] == pytest.approx(0.1, rel=1e-12)
    # follower: straight back at 1 m/s for one 0.1 s step
    np.testing.assert_allclose(out.state.robot_pos[0, 1] - s.robot_pos[0, 1], [-0.1, 0.0], atol=1e-12)


def test_non_finite_action_is_a_contract_error():
    with pytest.raises(ContractError):
        E.step(make_state(), np.array([[np.nan, 0, 0]]), np.zeros((1, 3)), POINT)


def test_cannot_step_a_terminated_state():
    s = make_state()
    s.terminated[:] = True
    with pytest.raises(ContractError):
        E.step(s, np.zeros((1, 3)), np.zeros((1, 3)), POINT)


def test_robot_collision_terminates_with_penalty():
    s = make_state(leader=(0.0, -2.0, math.pi / 2), follower=(0.0, -1.25, 0.0), obj=(3.0, 3.0, 0.0))
    out = E.step(s, np.array([[1.0, 0, 0]]), np.zeros((1, 3)), POINT)
    assert out.done[0] and out.reason[0] == DONE_COLLISION
    assert out.rewards.r_term[0] == -2.0


def test_horizon_truncates_without_penalty():
    s = make_state(step_index=299)
    out = E.step(s, np.zeros((1, 3)), np.zeros((1, 3)), POINT)
    assert out.done[0] and out.reason[0] == DONE_HORIZON and out.rewards.r_term[0] == 0.0


def test_push_along_face_normal_moves_box_forward():
    # leader touching the -x face, driving straight in
    s = make_state(leader=(-0.645, 0.0, 0.0), follower=(-3.0, 3.0, 0.0))
    state = s
    for _ in range(10):
        state = E.step(state, np.array([[1.0, 0, 0]]), np.zeros((1, 3)), POINT).state
    dx = state.obj_pos[0, 0]
    assert 0.3 < dx < 1.0
    assert abs(state.obj_pos[0, 1]) < 1e-9 and abs(state.obj_yaw[0]) < 1e-9
    assert state.obj_twist[0, 0] > 0


def test_off_centre_push_rotates_box():
    s = make_state(leader=(-0.645, 0.2, 0.0), follower=(-3.0, 3.0, 0.0))
    state = s
    for _ in range(5):
        state = E.step(state, np.array([[1.0, 0, 0]]), np.zeros((1, 3)), POINT).state
    assert state.obj_yaw[0] < -0.01  # pushing above centre turns it clockwise


def test_box_does_not_coast():
    s = make_state(leader=(-0.645, 0.0, 0.0), follower=(-3.0, 3.0, 0.0))
    moving = E.step(s, np.array([[1.0, 0, 0]]), np.zeros((1, 3)), POINT).state
    back = np.array([[-1.0, 0, 0]])
    stopped = E.step(moving, back, np.zeros((1, 3)), POINT).state
    np.testing.assert_array_equal(stopped.obj_pos, moving.obj_pos)


coords = st.floats(-2.0, 2.0, allow_nan=False)
yaws = st.floats(-math.pi, math.pi, allow_nan=False)
acts = st.lists(st.floats(-1.5, 1.5, allow_nan=False), min_size=3, max_size=3)


@given(lx=coords, ly=coords, lyaw=yaws, fx=coords, fy=coords, fyaw=yaws, oyaw=yaws, al=acts, af=acts,
       mode=st.sampled_from(["point", "cylinder"]))
def test_no_penetration_after_step(lx, ly, lyaw, fx, fy, fyaw, oyaw, al, af, mode):
    cfg = ScenarioConfig(goal_mode=mode, goals=((1.5, 0.0),))
    s = make_state(leader=(lx, ly, lyaw), follower=(fx, fy, fyaw), obj=(0.0, 0.0, oyaw), goals=((1.5, 0.0),))
    before = E.penetration_depths(s, cfg)
    if any(v[0] > 0 for v in before.values()):
        return  # start from a legal state only
    state = s
    for _ in range(3):
        out = E.step(state, np.array([al]), np.array([af]), cfg)
        for name, depth in E.penetration_depths(out.state, cfg).items():
            assert depth[0] <= E.PENETRATION_TOL, name
        if out.done[0]:
            break
        state = out.state


@given(alpha=st.floats(-math.pi, math.pi), seed=st.integers(0, 10_000))
def test_rotating_the_world_rotates_the_outcome(alpha, seed):
    cfg = E.load_scenario("desk_train")
    s, _ = E.reset(cfg, np.random.default_rng(seed), 1)
    rng = np.random.default_rng(seed + 1)
    a_l, a_f = rng.uniform(-1, 1, (1, 3)), rng.uniform(-1, 1, (1, 3))
    out = E.step(s, a_l, a_f, cfg)
    out_r = E.step(s.rotated(alpha), a_l, a_f, cfg)
    ref = out.state.rotated(alpha)
    np.testing.assert_allclose(out_r.state.robot_pos, ref.robot_pos, atol=1e-9)
    np.testing.assert_allclose(out_r.state.obj_pos, ref.obj_pos, atol=1e-9)
    np.testing.assert_allclose(out_r.rewards.total, out.rewards.total, atol=1e-9)
    np.testing.assert_allclose(out_r.obs.leader, out.obs.leader, atol=1e-9)


def test_minimum_ogd_against_cylinder_goal():
    """Drive boxes head-on into the landmark: OGD never drops below tangency."""
    rng = np.random.default_rng(0)
    n = 256
    cfg = ScenarioConfig(goal_mode="cylinder", goals=((0.0, 0.0),))
    ang = rng.uniform(-math.pi, math.pi, n)
    dirs = np.stack([np.cos(ang), np.sin(ang)], -1)
    obj = -dirs * rng.uniform(0.7, 1.2, n)[:, None]
    behind = obj - dirs * 0.7
    s = WorldState(
        robot_pos=np.stack([behind + 0.25 * dirs[:, ::-1] * [1, -1], behind - 0.25 * dirs[:, ::-1] * [1, -1]], 1),
        robot_yaw=np.stack([ang, ang], 1),
        robot_twist=np.zeros((n, 2, 3)),
        obj_pos=obj,
        obj_yaw=rng.uniform(-math.pi, math.pi, n),
        obj_twist=np.zeros((n, 3)),
        goals=np.zeros((n, 1, 2)),
        goal_index=np.zeros(n, dtype=int),
        step_index=np.zeros(n, dtype=int),
        terminated=np.zeros(n, dtype=bool),
    )
    lowest = np.inf
    for _ in range(30):
        a = np.column_stack([np.ones(n), rng.uniform(-0.3, 0.3, n), rng.uniform(-0.2, 0.2, n)])
        s = E.step(s, a, a, cfg).state
        s.terminated[:] = False
        lowest = min(lowest, E.object_goal_distance(s).min())
    assert lowest >= 0.59
    assert lowest < 0.65  # the landmark was actually reached


# --- observations -----------------------------------------------------------------


def test_observation_layout_and_dims():
    s = make_state(leader=(-1.0, 0.0, 0.0), follower=(0.0, 1.0, -math.pi / 2), obj=(1.0, 0.0, 0.0),
                   goals=((1.0, 2.0),))
    obs = E.observe(s)
    assert obs.leader.shape == (1, 13) and obs.follower.shape == (1, 11)
    np.testing.assert_allclose(obs.leader[0, :2], [2.0, 0.0], atol=1e-12)
    np.testing.assert_allclose(obs.leader[0, 2:4], [2.0, 2.0], atol=1e-12)
    np.testing.assert_allclose(obs.leader[0, 7:10], [0.0, 0.0, -1.0])
    np.testing.assert_allclose(obs.leader[0, 10:12], [1.0, 1.0], atol=1e-12)
    assert obs.leader[0, 12] == pytest.approx(-math.pi / 2)
    # follower faces -y, so the box (+1, -1) away in world is 1 m ahead and 1 m to its left
    np.testing.assert_allclose(obs.follower[0, :2], [1.0, 1.0], atol=1e-12)


def test_follower_observation_ignores_goals():
    s = make_state(goals=((2.0, 0.0), (0.0, 3.0)))
    base = E.observe(s).follower
    for gi in (0, 1):
        t = s.copy()
        t.goal_index[:] = gi
        t.goals = t.goals[:, ::-1] + 0.37
        np.testing.assert_array_equal(E.observe(t).follower, base)


def test_goal_index_selects_instructed_landmark():
    s = make_state(goals=((2.0, 0.0), (0.0, 3.0)), goal_index=1)
    np.testing.assert_array_equal(s.goal[0], [0.0, 3.0])


# --- vectorised wrapper -----------------------------------------------------------


def test_vec_env_is_deterministic_and_auto_resets():
    cfg = E.with_overrides(E.load_scenario("desk_train"), horizon=5)

    def roll():
        v = VecTransportEnv(cfg, 8, seed=3)
        rng = np.random.default_rng(0)
        done_seen = 0
        for _ in range(12):
            out = v.step(rng.uniform(-1, 1, (8, 3)), rng.uniform(-1, 1, (8, 3)))
            done_seen += out.done.sum()
            assert not v.state.terminated.any()
            assert (v.state.step_index[out.done] == 0).all()
        return v.state, done_seen

    a, n_a = roll()
    b, n_b = roll()
    assert n_a == n_b and n_a >= 16
    np.testing.assert_array_equal(a.robot_pos, b.robot_pos)


def test_reset_draws_goals_inside_sample_box():
    cfg = E.load_scenario("desk_train")
    s, _ = E.reset(cfg, np.random.default_rng(1), 200)
    x0, x1, y0, y1 = cfg.goal_sample_box
    g = s.goal
    assert ((g[:, 0] >= x0) & (g[:, 0] <= x1) & (g[:, 1] >= y0) & (g[:, 1] <= y1)).all()


def test_two_goal_reset_picks_both_landmarks():
    s, _ = E.reset(E.load_scenario("two_goal"), np.random.default_rng(0), 200)
    assert set(np.unique(s.goal_index)) == {0, 1}


def test_reset_states_are_overlap_free():
    for name in ("one_goal", "desk_two_goal"):
        cfg = E.load_scenario(name)
        s, _ = E.reset(cfg, np.random.default_rng(2), 300)
        for depth in E.penetration_depths(s, cfg).values():
            assert (depth <= 0).all()
        assert E.check_termination(s, cfg)[1].max() == DONE_NONE


def test_trajectory_log_round_trip(tmp_path):
    s = make_state()
    path = tmp_path / "t.jsonl"
    with E.TrajectoryLog(path, {"scenario": "x"}) as log:
        for _ in range(3):
            s = E.step(s, np.array([[0.5, 0, 0]]), np.zeros((1, 3)), POINT).state
            log.write(s.record(0))
    header, recs = E.read_trajectory(path)
    assert header == {"scenario": "x"} and len(recs) == 3
    assert recs[-1]["robot_pos"] == s.robot_pos[0].tolist()
