import json
import random

import pytest

from banditserve.errors import ConfigInvalid, SchemaViolation
from banditserve.simulate import (
    GoalSetting,
    make_environment,
    mix64,
    replay,
    run_simulation,
)

TB = {"kind": "thompson_bernoulli", "params": {"arms": ["A", "B"]}}
EF = {"kind": "epsilon_first", "params": {"arms": ["A", "B"]}}
FAIR = {"kind": "bernoulli_arms", "params": {"probs": {"A": 0.5, "B": 0.5}}}
TILTED = {"kind": "bernoulli_arms", "params": {"probs": {"A": 0.5, "B": 0.6}}}


def test_mix64_is_a_stable_64_bit_mixer():
    assert mix64(7, 0) == mix64(7, 0)
    seen = {mix64(s, r) for s in range(4) for r in range(64)}
    assert len(seen) == 4 * 64
    assert all(0 <= x < 2 ** 64 for x in seen)


# ---------------------------------------------------------------------------
# bernoulli environments


def test_fair_arms_yield_half_reward_for_any_policy():
    for config in (TB, EF):
        report = run_simulation(FAIR, config, horizon=10_000, seed=11)
        assert abs(report["mean_R"] / 10_000 - 0.5) < 0.02


def test_single_arm_policy_tracks_that_arms_rate():
    # a one-arm catalog policy acts as the fixed-oracle baseline
    fixed_b = {"kind": "epsilon_first", "params": {"arms": ["B"]}}
    report = run_simulation(TILTED, fixed_b, horizon=10_000, seed=13)
    assert abs(report["mean_R"] / 10_000 - 0.6) < 0.02
    assert report["freq"] == {"B": 1.0}


def test_mean_reward_stays_inside_the_arm_probability_envelope():
    env = {"kind": "bernoulli_arms", "params": {"probs": {"A": 0.2, "B": 0.7}}}
    for config in (TB, EF):
        report = run_simulation(env, config, horizon=4000, seed=3, replications=2)
        assert 0.2 <= report["mean_R"] / 4000 <= 0.7


def test_adaptive_policy_concentrates_on_the_better_arm():
    report = run_simulation(TILTED, TB, horizon=10_000, seed=21)
    assert report["freq"]["B"] > 0.6


def test_reports_are_byte_identical_under_a_seed():
    kwargs = dict(horizon=2000, seed=101, replications=3)
    a = run_simulation(TILTED, TB, **kwargs)
    b = run_simulation(TILTED, TB, **kwargs)
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)
    c = run_simulation(TILTED, TB, horizon=2000, seed=102, replications=3)
    assert json.dumps(a, sort_keys=True) != json.dumps(c, sort_keys=True)


def test_report_schema():
    report = run_simulation(FAIR, TB, horizon=500, seed=1, replications=4)
    assert set(report) == {"env", "config", "horizon", "replications", "seed",
                           "mean_R", "sd_R", "per_rep", "freq"}
    assert report["horizon"] == 500 and report["replications"] == 4
    assert report["seed"] == 1
    assert len(report["per_rep"]) == 4
    for rep, entry in enumerate(report["per_rep"]):
        assert entry["rep"] == rep
        assert entry["seed"] == mix64(1, rep)
        assert 0 <= entry["R"] <= 500
    assert abs(sum(report["freq"].values()) - 1.0) < 1e-9
    assert set(report["freq"]) <= {"A", "B"}
    assert report["sd_R"] >= 0
    assert report["config"]["kind"] == "thompson_bernoulli"


# ---------------------------------------------------------------------------
# goal environment


def test_goal_setting_reward_recurrence_with_no_noise():
    env = GoalSetting({"alpha": 5, "beta1": 2, "beta2": -1, "sigma": 0},
                      random.Random(0))
    ctx = {"weather": "sunny", "userid": 1}
    # goal 1 on an empty cell: delta = 1, km = 5 + 2 - 1 = 6
    doc, realized = env.reward(ctx, {"distance": 1.0})
    assert doc == {"km": 6.0} and realized == 6.0
    # cell mean is now 6; goal 7 -> delta 1 again
    doc, _ = env.reward(ctx, {"distance": 7.0})
    assert doc == {"km": 6.0}
    # a wildly overshooting goal drives the response negative -> clipped to 0
    doc, realized = env.reward(ctx, {"distance": 50.0})
    assert doc == {"km": 0.0} and realized == 0.0
    # cells are independent per weather/user
    doc, _ = env.reward({"weather": "rainy", "userid": 1}, {"distance": 1.0})
    assert doc == {"km": 6.0}


def test_goal_setting_context_stream():
    env = make_environment({"kind": "goal_setting",
                            "params": {"users": 3, "weathers": ["sunny"]}},
                           random.Random(5))
    seen = {env.context()["userid"] for _ in range(100)}
    assert seen == {1, 2, 3}
    assert env.context()["weather"] == "sunny"


def test_linear_goal_policy_finds_the_vertex():
    env = {"kind": "goal_setting",
           "params": {"alpha": 5, "beta1": 2, "beta2": -1, "sigma": 0.5}}
    report = run_simulation(env, {"kind": "linear_goal"}, horizon=2000, seed=29)
    (entry,) = report["per_rep"]
    # true optimum delta* = -beta1 / (2*beta2) = 1
    assert abs(entry["tail_mean_delta_star"] - 1.0) < 0.3
    assert "tail_mean_goal" in entry and "tail_mean_delta" in entry
    assert entry["R"] > 0
    assert set(report["freq"]) <= {"run", "swim"}


def test_mean_goal_policy_runs_on_the_goal_environment():
    env = {"kind": "goal_setting", "params": {"sigma": 0.2}}
    report = run_simulation(env, {"kind": "mean_goal"}, horizon=1000, seed=31)
    (entry,) = report["per_rep"]
    assert entry["R"] > 0
    assert "tail_mean_goal" in entry and "tail_mean_delta_star" not in entry


# ---------------------------------------------------------------------------
# nested runs


def test_nested_simulation_routes_between_children():
    root = {"kind": "nested", "nested_ids": [2, 3],
            "params": {"router": {"kind": "split", "weights": {"2": 1, "3": 1}}}}
    report = run_simulation(FAIR, root, horizon=3000, seed=17,
                            children={2: TB, 3: EF})
    assert abs(report["mean_R"] / 3000 - 0.5) < 0.03
    again = run_simulation(FAIR, root, horizon=3000, seed=17,
                           children={2: TB, 3: EF})
    assert json.dumps(report, sort_keys=True) == json.dumps(again, sort_keys=True)


def test_nested_simulation_validates_children():
    root = {"kind": "nested", "nested_ids": [2],
            "params": {"router": {"kind": "split", "weights": {"2": 1}}}}
    with pytest.raises(ConfigInvalid):
        run_simulation(FAIR, root, horizon=10, seed=1)  # child config missing
    with pytest.raises(ConfigInvalid):
        run_simulation(FAIR, TB, horizon=10, seed=1, children={1: EF})


# ---------------------------------------------------------------------------
# replay


def test_replay_folds_only_rewards_in_interaction_order():
    records = [
        {"t": 3, "kind": "reward", "context": {}, "action": {"version": "A"},
         "reward": {"click": 1}},
        {"t": 1, "kind": "decision", "context": {}, "action": {"version": "A"}},
        {"t": 2, "kind": "reward", "context": {}, "action": {"version": "A"},
         "reward": {"click": 0}},
        {"t": 4, "kind": "custom", "context": {"note": 1}},
        {"t": 5, "kind": "reward", "context": {}, "action": {"version": "B"},
         "reward": {"click": 1}},
    ]
    theta = replay(records, TB, experiment_id=9)
    state = theta.state_map(9)
    docs = {json.loads(k)[3]: doc for k, doc in state.items()}
    assert all(json.loads(k)[0] == 9 for k in state)
    assert docs["A"] == {"kind": "proportion", "n": 2, "s": 1}
    assert docs["B"] == {"kind": "proportion", "n": 1, "s": 1}


def test_replay_of_an_empty_log_is_empty():
    assert len(replay([], TB)) == 0


def test_replay_is_deterministic():
    rng = random.Random(2)
    records = [{"t": t, "kind": "reward", "context": {},
                "action": {"version": rng.choice(["A", "B"])},
                "reward": {"click": int(rng.random() < 0.5)}}
               for t in range(1, 200)]
    a = replay(records, TB).state_map()
    b = replay(records, TB).state_map()
    assert a == b


# ---------------------------------------------------------------------------
# validation


@pytest.mark.parametrize("env_doc", [
    {"kind": "unknown"},
    {"kind": "bernoulli_arms"},
    {"kind": "bernoulli_arms", "params": {"probs": {}}},
    {"kind": "bernoulli_arms", "params": {"probs": {"A": 1.5}}},
    {"kind": "bernoulli_arms", "params": {"probs": {"A": -0.1}}},
    {"kind": "goal_setting", "params": {"beta2": 0}},
    {"kind": "goal_setting", "params": {"beta2": 1.0}},
    {"kind": "goal_setting", "params": {"sigma": -1}},
    {"kind": "goal_setting", "params": {"users": 0}},
    {"kind": "goal_setting", "params": {"weathers": []}},
])
def test_environment_validation(env_doc):
    with pytest.raises(ConfigInvalid):
        make_environment(env_doc, random.Random(0))


def test_policy_environment_mismatch_is_reported():
    # goal policy on an arms environment: the policy rejects the empty context
    with pytest.raises(SchemaViolation):
        run_simulation(FAIR, {"kind": "mean_goal"}, horizon=10, seed=1)
    # arms policy on the goal environment: the action carries no distance
    env = {"kind": "goal_setting", "params": {}}
    with pytest.raises(ConfigInvalid):
        run_simulation(env, TB, horizon=10, seed=1)


def test_bad_run_arguments():
    with pytest.raises(ConfigInvalid):
        run_simulation(FAIR, TB, horizon=0, seed=1)
    with pytest.raises(ConfigInvalid):
        run_simulation(FAIR, TB, horizon=10, seed=1, replications=0)
