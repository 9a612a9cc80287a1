"""Thin CLI client for the benchmark service.

Talks HTTP to a running server (--server URL) or, by default, to the FastAPI
app in-process through an ASGI transport, so batch use needs no server and
stays deterministic. Exit codes: 0 success, 1 internal failure, 2 bad input.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys

import httpx

from . import __version__

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stalegrad",
                                     description="delayed-gradient learning benchmark client")
    parser.add_argument("--server", default=None,
                        help="base URL of a running service; default is in-process")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run a delay-sweep experiment")
    p_run.add_argument("--config", required=True, help="path to a key=value config file")

    p_bounds = sub.add_parser("bounds", help="evaluate bound formulas for a config")
    p_bounds.add_argument("--config", required=True, help="path to a key=value config file")

    sub.add_parser("hash-selftest", help="verify the pinned feature hash")
    sub.add_parser("version", help="print service name and version")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    return parser


def _client(server: str | None) -> httpx.AsyncClient:
    if server:
        return httpx.AsyncClient(base_url=server, timeout=None)
    from .service.app import app  # deferred: keep plain `version` fast

    return httpx.AsyncClient(transport=httpx.ASGITransport(app=app),
                             base_url="http://stalegrad.local", timeout=None)


async def _request(server: str | None, method: str, path: str, payload=None):
    async with _client(server) as client:
        if method == "GET":
            return await client.get(path)
        return await client.post(path, json=payload)


def _run_request(server, method, path, payload=None) -> int:
    try:
        resp = asyncio.run(_request(server, method, path, payload))
    except httpx.HTTPError as exc:
        print(f"error: cannot reach service: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    if resp.status_code == 400:
        detail = resp.json().get("detail", resp.text)
        print(f"error: {detail}", file=sys.stderr)
        return EXIT_BAD_INPUT
    if resp.status_code >= 500:
        print(f"error: service failure: {resp.text}", file=sys.stderr)
        return EXIT_INTERNAL
    if resp.status_code != 200:
        print(f"error: unexpected status {resp.status_code}: {resp.text}", file=sys.stderr)
        return EXIT_INTERNAL
    body = resp.json()
    print(json.dumps(body, indent=2))
    if path == "/hash-selftest" and not body.get("ok", False):
        return EXIT_INTERNAL
    return EXIT_OK


def _read_config(path: str) -> str | None:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return fh.read()
    except OSError as exc:
        print(f"error: cannot read config {path}: {exc}", file=sys.stderr)
        return None


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)

    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return EXIT_OK

    if args.command == "version":
        return _run_request(args.server, "GET", "/version")

    if args.command == "hash-selftest":
        return _run_request(args.server, "GET", "/hash-selftest")

    text = _read_config(args.config)
    if text is None:
        return EXIT_BAD_INPUT
    path = "/run" if args.command == "run" else "/bounds"
    return _run_request(args.server, "POST", path, {"config_text": text})


if __name__ == "__main__":
    sys.exit(main())
