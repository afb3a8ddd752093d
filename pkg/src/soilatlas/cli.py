"""Command line entry point for running the platform server."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import uvicorn

from .config import Config, load_config
from .httpapi import app_from_config


def _config_from_args(args) -> Config:
    if args.config:
        return load_config(args.config)
    if not args.data_dir:
        raise SystemExit("either --config or --data-dir is required")
    extra = {}
    if args.admin_user:
        extra["bootstrap_admin_user"] = args.admin_user
        extra["bootstrap_admin_password"] = args.admin_password or ""
    return Config(data_dir=args.data_dir, host=args.host, port=args.port, **extra)


def _mount_ui(app, ui_dir: str) -> None:
    from starlette.staticfiles import StaticFiles

    path = Path(ui_dir)
    if not path.is_dir():
        raise SystemExit(f"--ui directory {ui_dir!r} does not exist")
    app.mount("/ui", StaticFiles(directory=str(path), html=True), name="ui")


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="soilatlas",
        description="Run the soil data platform server.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    serve = sub.add_parser("serve", help="start the HTTP server")
    serve.add_argument("--config", help="JSON configuration file")
    serve.add_argument("--data-dir", help="storage directory (alternative to --config)")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8080)
    serve.add_argument("--admin-user", help="bootstrap administrator username")
    serve.add_argument("--admin-password", help="bootstrap administrator password")
    serve.add_argument("--ui", help="directory of built web UI assets to serve at /ui")
    serve.add_argument("--log-level", default="info")

    spec = sub.add_parser("routes", help="print the HTTP surface as JSON")

    args = parser.parse_args(argv)

    if args.command == "routes":
        from .httpapi import ROUTES

        print(json.dumps(
            [{"method": r.method, "path": r.path, "min_role": r.min_role,
              "summary": r.summary} for r in ROUTES],
            indent=2,
        ))
        return 0

    logging.basicConfig(
        level=getattr(logging, args.log_level.upper(), logging.INFO),
        format="%(asctime)s %(name)s %(message)s",
    )
    config = _config_from_args(args)
    app = app_from_config(config)
    if args.ui:
        _mount_ui(app, args.ui)
    uvicorn.run(app, host=config.host, port=config.port, log_level=args.log_level)
    return 0


if __name__ == "__main__":
    sys.exit(main())
