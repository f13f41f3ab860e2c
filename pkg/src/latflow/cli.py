"""latflow command line: a thin client of the experiment service.

    latflow <kind> --config spec.json [--out DIR] [--workers N] [--server URL]
    latflow serve [--host H] [--port P]

Without --server the CLI talks to the service in-process (ASGI transport), so
single-machine runs need no running server; with --server it posts the same
request over HTTP. Either way the request/response schema is identical and
artifacts are written locally.

Exit status: 0 ok, 2 config/parse errors, 3 model validation failure,
4 numerical blow-up, 1 anything else.
"""

from __future__ import annotations

import json
import pathlib
import sys
import warnings

import click
import httpx

from .experiments import KINDS

PARSE_EXIT = 2
VALIDATION_EXIT = 3
BLOWUP_EXIT = 4


def _open_client(server: str | None) -> httpx.Client:
    if server:
        return httpx.Client(base_url=server, timeout=None)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        from fastapi.testclient import TestClient

        from .service.app import app
    return TestClient(app)


def _fail(message: str, code: int):
    click.echo(f"error: {message}", err=True)
    sys.exit(code)


def _load_json(path: pathlib.Path, what: str) -> dict | list:
    try:
        text = path.read_text()
    except OSError as exc:
        _fail(f"cannot read {what} '{path}': {exc}", PARSE_EXIT)
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        _fail(f"{what} '{path}' line {exc.lineno} column {exc.colno}: {exc.msg}",
              PARSE_EXIT)


def _run_kind(kind: str, config: str, out: str | None, workers: int | None,
              server: str | None):
    cfg_path = pathlib.Path(config)
    spec = _load_json(cfg_path, "config")
    if not isinstance(spec, dict):
        _fail(f"config '{cfg_path}' must be a JSON object", PARSE_EXIT)
    if "kind" in spec and spec["kind"] != kind:
        _fail(f"config kind '{spec['kind']}' does not match subcommand '{kind}'",
              PARSE_EXIT)
    if "model" in spec:
        model_cfg = spec["model"]
    elif "model_ref" in spec:
        model_path = (cfg_path.parent / spec["model_ref"]).resolve()
        model_cfg = _load_json(model_path, "model config")
    else:
        _fail("config needs 'model' or 'model_ref'", PARSE_EXIT)
    body = {
        "kind": kind,
        "model": model_cfg,
        "params": spec.get("params", {}),
        "seed": int(spec.get("seed", 0)),
        "workers": workers,
    }
    out_dir = pathlib.Path(out or spec.get("output", "."))
    try:
        with _open_client(server) as client:
            resp = client.post(f"/experiments/{kind}", json=body)
    except httpx.HTTPError as exc:
        _fail(f"service unreachable: {exc}", 1)
    if resp.status_code != 200:
        _handle_error(resp)
    payload = resp.json()
    out_dir.mkdir(parents=True, exist_ok=True)
    for name in sorted(payload["artifacts"]):
        target = out_dir / name
        target.write_text(payload["artifacts"][name])
        click.echo(f"wrote {target}")
    sys.exit(0)


def _handle_error(resp: httpx.Response):
    try:
        detail = resp.json().get("detail")
    except (ValueError, AttributeError):
        detail = None
    if isinstance(detail, dict) and "code" in detail:
        code = detail["code"]
        message = detail.get("message", "")
        if code == "validation":
            click.echo("model validation failed:", err=True)
            report = detail.get("report") or {}
            for cond in report.get("conditions", []):
                status = "pass" if cond.get("passed") else "FAIL"
                click.echo(f"  ({cond.get('condition')}) {status} "
                           f"{cond.get('witness')}", err=True)
            sys.exit(VALIDATION_EXIT)
        if code == "blowup":
            _fail(f"numerical blow-up: {message}", BLOWUP_EXIT)
        _fail(message or f"request rejected ({resp.status_code})", PARSE_EXIT)
    if resp.status_code == 422:
        _fail(f"invalid request: {resp.text}", PARSE_EXIT)
    _fail(f"service error {resp.status_code}: {resp.text}", 1)


@click.group()
def main():
    """Harmonic-oscillator lattice experiments."""


def _register(kind: str):
    @main.command(name=kind,
                  help=f"Run a '{kind}' experiment from a JSON config file.")
    @click.option("--config", required=True, type=click.Path(),
                  help="Experiment spec JSON (model_ref resolved relative to it).")
    @click.option("--out", default=None, type=click.Path(),
                  help="Artifact directory (defaults to the spec's 'output' or cwd).")
    @click.option("--workers", default=None, type=int,
                  help="Worker count for parallel sweeps (default: server cores).")
    @click.option("--server", default=None,
                  help="Remote service URL; defaults to in-process execution.")
    def _cmd(config, out, workers, server, _kind=kind):
        _run_kind(_kind, config, out, workers, server)


for _kind in KINDS:
    _register(_kind)


@main.command()
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8321, show_default=True, type=int)
def serve(host, port):
    """Run the experiment service over HTTP."""
    import uvicorn

    from .service.app import app
    uvicorn.run(app, host=host, port=port)


if __name__ == "__main__":
    main()
