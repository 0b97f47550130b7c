"""Operator command line.

Every data-touching subcommand talks HTTP to a running server (one write
path, no file-lock coordination with a live process); `serve` runs the
server and `simulate` runs in-process. Output lines are canonical JSON
sorted by id / sequence number so they diff and grep cleanly.
"""

from __future__ import annotations

import json
from pathlib import Path

import click
import httpx
import uvicorn

from .documents import canonical
from .errors import BanditError
from .server import create_app
from .service import DecisionService
from .simulate import run_simulation

SERVER_ENVVAR = "BANDITSERVE_SERVER"
ADMIN_ENVVAR = "BANDITSERVE_ADMIN_TOKEN"
DEFAULT_SERVER = "http://127.0.0.1:8000"

server_option = click.option(
    "--server", envvar=SERVER_ENVVAR, default=DEFAULT_SERVER, show_default=True,
    help=f"base URL of a running server (env {SERVER_ENVVAR})")
admin_option = click.option(
    "--admin-token", envvar=ADMIN_ENVVAR, default=None,
    help=f"admin token for management calls (env {ADMIN_ENVVAR})")


def _request(method: str, server: str, path: str, admin_token=None, **kwargs) -> dict:
    headers = kwargs.pop("headers", {})
    if admin_token is not None:
        headers["X-Admin-Token"] = admin_token
    try:
        response = httpx.request(method, server.rstrip("/") + path,
                                 headers=headers, timeout=30.0, **kwargs)
    except httpx.HTTPError as exc:
        raise click.ClickException(f"cannot reach server at {server}: {exc}")
    try:
        body = response.json()
    except ValueError:
        raise click.ClickException(
            f"server returned non-JSON ({response.status_code})")
    if response.status_code != 200:
        code = body.get("error", response.status_code)
        raise click.ClickException(f"{code}: {body.get('message', '')}")
    return body


def _experiment_key(server: str, admin_token, experiment_id: int) -> str:
    """Resolve an experiment's access key through the management list."""
    body = _request("GET", server, "/management/exp", admin_token)
    for doc in body["experiments"]:
        if doc["id"] == experiment_id:
            return doc["key"]
    raise click.ClickException(f"unknown_experiment: no experiment with id {experiment_id}")


def _load_json_file(path: str, what: str) -> dict:
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise click.ClickException(f"cannot read {what} {path}: {exc}")


@click.group()
def main():
    """Streaming bandit decision service."""


# ---------------------------------------------------------------------------
# serve


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True, type=int)
@click.option("--data-dir", type=click.Path(file_okay=False), default=None,
              help="state directory; omit for memory-only operation")
@admin_option
@click.option("--seed", type=int, default=None,
              help="seed the decision rng for reproducible runs")
@click.option("--snapshot-every", type=int, default=10000, show_default=True,
              help="writes between snapshot compactions")
def serve(host, port, data_dir, admin_token, seed, snapshot_every):
    """Run the decision server."""
    service = DecisionService(data_dir=Path(data_dir) if data_dir else None,
                              admin_token=admin_token, seed=seed,
                              snapshot_every=snapshot_every)
    try:
        uvicorn.run(create_app(service), host=host, port=port,
                    log_level="warning", access_log=False)
    finally:
        service.close()


# ---------------------------------------------------------------------------
# experiments


@main.group()
def exp():
    """Manage experiments."""


@exp.command("create")
@click.option("--name", required=True)
@click.option("--policy-file", required=True, type=click.Path(exists=True, dir_okay=False),
              help="PolicyConfig document (JSON), stored verbatim")
@server_option
@admin_option
def exp_create(name, policy_file, server, admin_token):
    """Register an experiment; prints its id and access key."""
    config = _load_json_file(policy_file, "policy file")
    body = _request("POST", server, "/management/exp", admin_token,
                    json={"name": name, "config": config})
    click.echo(canonical({"id": body["id"], "key": body["key"]}))


@exp.command("list")
@server_option
@admin_option
def exp_list(server, admin_token):
    """One canonical document per experiment, sorted by id."""
    body = _request("GET", server, "/management/exp", admin_token)
    for doc in sorted(body["experiments"], key=lambda d: d["id"]):
        click.echo(canonical(doc))


@exp.command("delete")
@click.option("--id", "experiment_id", required=True, type=int)
@server_option
@admin_option
def exp_delete(experiment_id, server, admin_token):
    """Delete an experiment with its state and logs."""
    _request("DELETE", server, f"/management/exp/{experiment_id}", admin_token)
    click.echo(canonical({"status": "ok", "id": experiment_id}))


# ---------------------------------------------------------------------------
# theta


@main.group()
def theta():
    """Inspect stored summary state."""


@theta.command("dump")
@click.option("--id", "experiment_id", required=True, type=int)
@click.option("--name", default=None, help="filter on state name")
@click.option("--key", "key_field", default=None, help="filter on state key field")
@click.option("--value", default=None, help="filter on state key value")
@server_option
@admin_option
def theta_dump(experiment_id, name, key_field, value, server, admin_token):
    """Canonical state documents, one per line."""
    access_key = _experiment_key(server, admin_token, experiment_id)
    params = {"key": access_key}
    for param_name, param in (("name", name), ("key_field", key_field),
                              ("value", value)):
        if param is not None:
            params[param_name] = param
    body = _request("GET", server, f"/{experiment_id}/theta.json", params=params)
    for record in body["theta"]:
        click.echo(canonical(record))


# ---------------------------------------------------------------------------
# logs


@main.group()
def log():
    """Inspect interaction logs."""


@log.command("export")
@click.option("--id", "experiment_id", required=True, type=int)
@click.option("--out", required=True, type=click.Path(dir_okay=False, writable=True),
              help="NDJSON output path")
@server_option
@admin_option
def log_export(experiment_id, out, server, admin_token):
    """Export the full log, oldest record first."""
    access_key = _experiment_key(server, admin_token, experiment_id)
    records = []
    offset = 0
    while True:
        body = _request("GET", server, f"/{experiment_id}/log.json",
                        params={"key": access_key, "limit": 10000, "offset": offset})
        page = body["logs"]
        records.extend(page)
        if len(page) < 10000:
            break
        offset += len(page)
    records.sort(key=lambda r: r["t"])
    with open(out, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(canonical(record) + "\n")
    click.echo(f"wrote {len(records)} records to {out}")


# ---------------------------------------------------------------------------
# simulate


def _parse_env(spec: str) -> dict:
    if spec.startswith("bernoulli:"):
        probs = {}
        for i, token in enumerate(spec[len("bernoulli:"):].split(",")):
            try:
                p = float(token)
            except ValueError:
                raise click.ClickException(f"bad arm probability {token!r}")
            if i >= 26:
                raise click.ClickException("too many arms for letter labels")
            probs[chr(ord("A") + i)] = p
        return {"kind": "bernoulli_arms", "params": {"probs": probs}}
    if spec == "goal" or spec.startswith("goal:"):
        params = {}
        if spec.startswith("goal:"):
            for pair in spec[len("goal:"):].split(","):
                if "=" not in pair:
                    raise click.ClickException(f"bad goal parameter {pair!r}")
                k, v = pair.split("=", 1)
                try:
                    params[k] = int(v) if k == "users" else float(v)
                except ValueError:
                    raise click.ClickException(f"bad goal parameter {pair!r}")
        return {"kind": "goal_setting", "params": params}
    if Path(spec).is_file():
        return _load_json_file(spec, "environment file")
    raise click.ClickException(
        f"unrecognized environment {spec!r}; expected bernoulli:p1,p2,... "
        "or goal[:k=v,...] or a JSON file path")


@main.command()
@click.option("--env", "env_spec", required=True,
              help="bernoulli:p1,p2,... | goal[:k=v,...] | JSON file")
@click.option("--policy-file", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--horizon", required=True, type=int)
@click.option("--seed", default=0, show_default=True, type=int)
@click.option("--replications", default=1, show_default=True, type=int)
@click.option("--out", default=None, type=click.Path(dir_okay=False, writable=True),
              help="report path; omit to print to stdout")
def simulate(env_spec, policy_file, horizon, seed, replications, out):
    """Run the policy against a synthetic environment; emit report JSON."""
    env_doc = _parse_env(env_spec)
    config_doc = _load_json_file(policy_file, "policy file")
    try:
        report = run_simulation(env_doc, config_doc, horizon=horizon, seed=seed,
                                replications=replications)
    except BanditError as exc:
        raise click.ClickException(str(exc))
    text = json.dumps(report, sort_keys=True, indent=2) + "\n"
    if out:
        Path(out).write_text(text, encoding="utf-8")
        click.echo(f"wrote report to {out}")
    else:
        click.echo(text, nl=False)


if __name__ == "__main__":
    main()
