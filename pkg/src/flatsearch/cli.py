"""Command-line client for the search service.

Without ``--server`` the service runs in-process, so every subcommand works
offline; with ``--server URL`` the same requests go to a running instance.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import httpx


def _client(server: str | None):
    if server:
        return httpx.Client(base_url=server, timeout=None)
    from fastapi.testclient import TestClient

    from .service import create_app

    return TestClient(create_app())


def _config(path: str | None) -> dict:
    return json.loads(Path(path).read_text()) if path else {}


def _check(resp) -> dict:
    if resp.status_code >= 400:
        raise SystemExit(f"error {resp.status_code}: {resp.text}")
    return resp.json()


def cmd_search(args, client) -> dict:
    body = {"config": _config(args.config), "seed": args.seed, "resume": args.resume,
            "optimizer": args.optimizer, "alpha": args.alpha, "sigma": args.sigma,
            "param_limit": args.param_limit, "penalty": args.penalty}
    for key in ("archive_path", "log_path"):
        if getattr(args, key):
            body["config"][key] = getattr(args, key)
    job = _check(client.post("/search", json=body))
    last = -1
    while job["state"] in ("queued", "running"):
        time.sleep(args.poll)
        job = _check(client.get(f"/jobs/{job['id']}"))
        if job["archive_size"] != last:
            last = job["archive_size"]
            print(f"archive size {last}", file=sys.stderr)
    if job["state"] == "failed":
        raise SystemExit(f"search failed: {job['error']}")
    return job["result"]


def cmd_eval(args, client) -> dict:
    gene = [int(v) for v in args.gene.split(",")]
    return _check(client.post("/evaluate", json={"gene": gene, "config": _config(args.config), "seed": args.seed}))


def cmd_corrupt(args, client) -> dict:
    return _check(client.post("/corrupt", json={
        "types": args.types.split(","), "out": args.out, "config": _config(args.config),
        "resolution": args.resolution, "seed": args.seed}))


def cmd_report(args, client) -> dict:
    types = args.types.split(",") if args.types else []
    return _check(client.post("/report", json={
        "archive": args.archive, "out": args.out, "config": _config(args.config),
        "types": types, "seed": args.seed}))


def cmd_serve(args, client=None) -> None:
    import uvicorn

    uvicorn.run("flatsearch.service:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="flatsearch", description=__doc__.splitlines()[0])
    parser.add_argument("--server", help="base URL of a running service")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("search", help="run a search")
    p.add_argument("--config", help="JSON file mirroring EngineConfig")
    p.add_argument("--seed", type=int)
    p.add_argument("--resume", action="store_true")
    p.add_argument("--optimizer", choices=("sgd", "asam"))
    p.add_argument("--alpha", type=float)
    p.add_argument("--sigma", type=float)
    p.add_argument("--param-limit", type=float, help="parameter limit in millions")
    p.add_argument("--penalty", type=float)
    p.add_argument("--archive-path", help="override the archive location")
    p.add_argument("--log-path", help="override the run-log location")
    p.add_argument("--poll", type=float, default=1.0, help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_search)

    p = sub.add_parser("eval", help="train and score one gene")
    p.add_argument("--gene", required=True, help='comma-separated indices, e.g. "0,1,2"')
    p.add_argument("--config")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("corrupt", help="write corrupted copies of the test split")
    p.add_argument("--types", required=True, help="comma-separated corruption names")
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--resolution", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_corrupt)

    p = sub.add_parser("report", help="tables and curves for an archive's top-k models")
    p.add_argument("--archive", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.add_argument("--types", help="retrain the top-k and add corruption errors for these types")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        cmd_serve(args)
        return 0
    with _client(args.server) as client:
        out = args.func(args, client)
    print(json.dumps(out, indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
