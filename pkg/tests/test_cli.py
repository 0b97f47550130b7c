import json

import httpx
import pytest
from click.testing import CliRunner

from banditserve.cli import main
from banditserve.service import DecisionService
from conftest import uvicorn_in_thread

TB = {"kind": "thompson_bernoulli", "params": {"arms": ["A", "B"]}}


@pytest.fixture()
def runner():
    return CliRunner()


@pytest.fixture()
def live_server():
    service = DecisionService(admin_token="tok", seed=5)
    with uvicorn_in_thread(service) as url:
        yield url, service
    service.close()


def cli_env(url):
    return {"BANDITSERVE_SERVER": url, "BANDITSERVE_ADMIN_TOKEN": "tok"}


def write_policy(tmp_path, doc, name="policy.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


# ---------------------------------------------------------------------------
# simulate (in-process)


def test_simulate_reports_are_byte_identical(runner, tmp_path):
    policy = write_policy(tmp_path, TB)
    outputs = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        result = runner.invoke(main, ["simulate", "--env", "bernoulli:0.5,0.6",
                                      "--policy-file", policy, "--horizon", "400",
                                      "--seed", "7", "--out", str(out)])
        assert result.exit_code == 0, result.output
        outputs.append(out.read_bytes())
    assert outputs[0] == outputs[1]
    report = json.loads(outputs[0])
    assert report["horizon"] == 400 and report["seed"] == 7


def test_simulate_prints_to_stdout_by_default(runner, tmp_path):
    policy = write_policy(tmp_path, TB)
    result = runner.invoke(main, ["simulate", "--env", "bernoulli:0.5,0.5",
                                  "--policy-file", policy, "--horizon", "200",
                                  "--seed", "3"])
    assert result.exit_code == 0
    report = json.loads(result.output)
    assert 0 <= report["mean_R"] <= 200


def test_simulate_goal_environment_shorthand(runner, tmp_path):
    policy = write_policy(tmp_path, {"kind": "linear_goal"})
    result = runner.invoke(main, ["simulate",
                                  "--env", "goal:alpha=5,beta1=2,beta2=-1,sigma=0.5",
                                  "--policy-file", policy, "--horizon", "300",
                                  "--seed", "9"])
    assert result.exit_code == 0, result.output
    report = json.loads(result.output)
    assert "tail_mean_delta_star" in report["per_rep"][0]


def test_simulate_env_file(runner, tmp_path):
    policy = write_policy(tmp_path, TB)
    env_file = tmp_path / "env.json"
    env_file.write_text(json.dumps(
        {"kind": "bernoulli_arms", "params": {"probs": {"A": 0.9, "B": 0.1}}}))
    result = runner.invoke(main, ["simulate", "--env", str(env_file),
                                  "--policy-file", policy, "--horizon", "200",
                                  "--seed", "1"])
    assert result.exit_code == 0
    assert json.loads(result.output)["env"]["params"]["probs"]["A"] == 0.9


def test_simulate_rejects_bad_inputs(runner, tmp_path):
    policy = write_policy(tmp_path, TB)
    result = runner.invoke(main, ["simulate", "--env", "marsaglia:1,2",
                                  "--policy-file", policy, "--horizon", "10"])
    assert result.exit_code != 0
    assert "unrecognized environment" in result.output
    result = runner.invoke(main, ["simulate", "--env", "bernoulli:0.5,nope",
                                  "--policy-file", policy, "--horizon", "10"])
    assert result.exit_code != 0
    bad_policy = write_policy(tmp_path, {"kind": "nope"}, "bad.json")
    result = runner.invoke(main, ["simulate", "--env", "bernoulli:0.5",
                                  "--policy-file", bad_policy, "--horizon", "10"])
    assert result.exit_code != 0


def test_help_screens(runner):
    for args in ([], ["serve", "--help"], ["exp", "--help"], ["simulate", "--help"]):
        result = runner.invoke(main, args + (["--help"] if not args else []))
        assert result.exit_code == 0


# ---------------------------------------------------------------------------
# server-backed subcommands


def test_experiment_lifecycle_over_the_wire(runner, tmp_path, live_server):
    url, service = live_server
    env = cli_env(url)
    policy = write_policy(tmp_path, {"kind": "mean_goal"})

    result = runner.invoke(main, ["exp", "create", "--name", "runsmart",
                                  "--policy-file", policy], env=env)
    assert result.exit_code == 0, result.output
    created = json.loads(result.output)
    assert created["id"] == 1
    assert service.registry.get(1).key == created["key"]

    result = runner.invoke(main, ["exp", "list"], env=env)
    assert result.exit_code == 0
    (line,) = result.output.strip().splitlines()
    doc = json.loads(line)
    assert doc["name"] == "runsmart" and doc["config"]["kind"] == "mean_goal"

    # fresh experiment: no state, empty dump, exit 0
    result = runner.invoke(main, ["theta", "dump", "--id", "1"], env=env)
    assert result.exit_code == 0 and result.output == ""

    # one observed interaction via the documented wire call
    r = httpx.get(f"{url}/1/setreward.json", params={
        "key": created["key"],
        "context": json.dumps({"weather": "sunny", "userid": 12}),
        "action": json.dumps({"type": "run", "distance": 1.0}),
        "reward": json.dumps({"km": 8})})
    assert r.status_code == 200

    result = runner.invoke(main, ["theta", "dump", "--id", "1"], env=env)
    assert result.exit_code == 0
    (line,) = result.output.strip().splitlines()
    record = json.loads(line)
    assert record["value"] == "sunny12"
    assert record["state"] == {"kind": "mean", "mean": 8.0, "n": 1}

    result = runner.invoke(main, ["theta", "dump", "--id", "1",
                                  "--value", "nobody"], env=env)
    assert result.exit_code == 0 and result.output == ""

    out = tmp_path / "log.ndjson"
    result = runner.invoke(main, ["log", "export", "--id", "1",
                                  "--out", str(out)], env=env)
    assert result.exit_code == 0
    lines = out.read_text().strip().splitlines()
    assert [json.loads(l)["t"] for l in lines] == [1]
    assert json.loads(lines[0])["kind"] == "reward"

    result = runner.invoke(main, ["exp", "delete", "--id", "1"], env=env)
    assert result.exit_code == 0
    result = runner.invoke(main, ["exp", "list"], env=env)
    assert result.output == ""
    result = runner.invoke(main, ["theta", "dump", "--id", "1"], env=env)
    assert result.exit_code != 0
    assert "unknown_experiment" in result.output


def test_admin_token_is_enforced(runner, tmp_path, live_server):
    url, _ = live_server
    policy = write_policy(tmp_path, TB)
    result = runner.invoke(main, ["exp", "create", "--name", "x",
                                  "--policy-file", policy],
                           env={"BANDITSERVE_SERVER": url,
                                "BANDITSERVE_ADMIN_TOKEN": "wrong"})
    assert result.exit_code != 0
    assert "admin_token" in result.output


def test_unreachable_server_is_a_one_line_error(runner, tmp_path):
    policy = write_policy(tmp_path, TB)
    result = runner.invoke(main, ["exp", "create", "--name", "x",
                                  "--policy-file", policy,
                                  "--server", "http://127.0.0.1:9"],
                           env={"BANDITSERVE_ADMIN_TOKEN": "tok"})
    assert result.exit_code != 0
    assert "cannot reach server" in result.output
