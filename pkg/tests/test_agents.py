from dataclasses import replace

import numpy as np
import pytest

from dynabench import world as W
from dynabench.events import EventTag
from dynabench.expert import ExpertConfig
from dynabench.policy import network as net
from dynabench.policy.agents import (
    LearnedPolicy,
    OraclePolicy,
    ReactivePolicy,
    ZeroPolicy,
    decode_action,
    interception_time,
    object_centroid,
)
from dynabench.policy.features import flow_feature_dim, frame_feature_dim
from dynabench.rollout import Trace, evaluate, run_episode, scenarios_for
from scenes import line, static

TASK = W.TaskSpec(alpha=0.1)


def observe_at(obj, ee=None, task=TASK):
    s = W.reset(task, static(obj), 0)
    if ee is not None:
        s.ee = np.array([ee], float)
    return W.observe(s, task)


def test_centroid_recovers_object_position():
    obs = observe_at((0.05, -0.03))
    c = object_centroid(obs.frames["main"], TASK)
    assert np.linalg.norm(c - (0.05, -0.03)) < 0.4 / 64


def test_centroid_none_when_not_visible():
    assert object_centroid(np.zeros((64, 64), np.uint8), TASK) is None


def test_reactive_at_centroid_commands_zero_and_close():
    obs = observe_at((0.0, 0.0))
    c = object_centroid(obs.frames["main"], TASK)
    pol = ReactivePolicy()
    pol.reset(TASK)
    a = pol.act(observe_at((0.0, 0.0), ee=c))
    assert np.allclose(a.velocity, 0) and a.gripper[0] is W.GripCommand.CLOSE


def test_reactive_heads_at_full_speed_when_far():
    pol = ReactivePolicy()
    pol.reset(TASK)
    a = pol.act(observe_at((0.1, 0.1)))
    assert np.linalg.norm(a.velocity[0]) == pytest.approx(TASK.a_max)
    assert a.gripper[0] is W.GripCommand.OPEN


def test_reactive_static_target_time_is_distance_over_speed():
    obj = (0.12, 0.1)
    traj = static(obj)
    out = run_episode(ReactivePolicy(), TASK, traj, 0)
    assert out.success
    contact = next(e.at for e in out.events if e.tag is EventTag.CONTACT)
    dist = np.linalg.norm(np.subtract(obj, TASK.home_poses()[0]))
    assert dist / TASK.a_max <= contact <= dist / TASK.a_max + 2 * TASK.dt


def test_interception_time_closed_form():
    ee = np.array([0.0, -0.15])
    p0, v = np.array([-0.1, 0.05]), np.array([0.08, 0.0])
    traj = line(p0, v)
    tau = interception_time(traj, 0.0, ee, 0.25)
    # |p0 + v t - ee| = s t  ->  (|v|^2 - s^2) t^2 + 2 (p0-ee).v t + |p0-ee|^2 = 0
    d = p0 - ee
    a, b, c = v @ v - 0.25**2, 2 * d @ v, d @ d
    t_star = (-b - np.sqrt(b * b - 4 * a * c)) / (2 * a)
    assert abs(np.linalg.norm(p0 + v * tau - ee) - 0.25 * tau) <= 1e-3
    assert tau == pytest.approx(t_star, abs=1e-3)


def test_oracle_equals_reactive_on_static_target():
    traj = static((0.08, 0.12))
    tr_o, tr_r = Trace(), Trace()
    o = run_episode(OraclePolicy(), TASK, traj, 0, tr_o)
    r = run_episode(ReactivePolicy(), TASK, traj, 0, tr_r)
    assert np.array_equal(np.array(tr_o.actions), np.array(tr_r.actions))
    assert o.to_dict() == r.to_dict()


def test_oracle_requires_trajectory():
    with pytest.raises(ValueError):
        OraclePolicy().reset(TASK, None)


def test_reactive_tail_chase_is_slower_than_oracle():
    traj = line((-0.15, 0.05), (0.1, 0.0))
    task = replace(TASK, contact_radius=0.004)
    to, tr = Trace(), Trace()
    run_episode(OraclePolicy(), task, traj, 0, to)
    run_episode(ReactivePolicy(), task, traj, 0, tr)

    def first_close(trace):
        d = np.linalg.norm(np.array(trace.ee)[:, 0] - np.array(trace.obj), axis=1)
        return int(np.argmax(d <= 2 * task.contact_radius)) if (d <= 2 * task.contact_radius).any() else len(d)

    assert first_close(tr) > first_close(to)


def test_zero_policy_times_out():
    out = run_episode(ZeroPolicy(), TASK, line((0.1, 0.1), (0.0, -0.01)), 0)
    assert not out.success and out.has(EventTag.TIMEOUT)


def zero_learned(h=0):
    D = frame_feature_dim(TASK.resolution) + 4 + h * flow_feature_dim()
    p = net.zero_params(D, 15, 3, 2)
    p.meta = {"h": h, "history_stride": 2, "replan_every": 5}
    return p


@pytest.mark.parametrize("h", [0, 2])
def test_zero_weight_learned_policy_is_passive(h):
    traj = line((0.1, 0.1), (0.0, -0.01))
    tr = Trace()
    out = run_episode(LearnedPolicy(zero_learned(h)), TASK, traj, 0, tr)
    assert out.has(EventTag.TIMEOUT) and not out.success
    ee = np.array(tr.ee)
    assert np.allclose(ee, ee[0])


def test_learned_policy_replans_every_m_steps():
    p = zero_learned()
    calls = []
    pol = LearnedPolicy(p, replan_every=5)
    orig = net.forward_actions

    def spy(params, x):
        calls.append(1)
        return orig(params, x)

    net_mod = __import__("dynabench.policy.agents", fromlist=["net"]).net
    net_mod.forward_actions, saved = spy, net_mod.forward_actions
    try:
        run_episode(pol, replace(TASK, t_max=12 * TASK.dt), static((0.15, 0.15)), 0)
    finally:
        net_mod.forward_actions = saved
    assert len(calls) == 3  # 12 steps, replanning at 0, 5, 10


def test_learned_policy_validates_replan_interval():
    with pytest.raises(ValueError):
        LearnedPolicy(zero_learned(), replan_every=16)


def test_decode_action_scales_with_tanh():
    a = decode_action(np.array([100.0, -100.0, 0.3]), TASK)
    assert np.allclose(a.velocity, [[TASK.a_max, -TASK.a_max]])
    assert a.gripper[0] is W.GripCommand.CLOSE
    assert decode_action(np.zeros(3), TASK).gripper[0] is W.GripCommand.OPEN


def test_evaluate_uses_disjoint_deterministic_scenarios():
    s1 = scenarios_for(TASK, 3, seed=0)
    s2 = scenarios_for(TASK, 3, seed=0)
    assert [s.traj.to_dict() for s in s1] == [s.traj.to_dict() for s in s2]
    outs = evaluate(ReactivePolicy, TASK, 3, 0, ExpertConfig(), scenarios=s1)
    assert len(outs) == 3
