"""Command-line client for the analysis service.

Each subcommand reads a JSON config, validates it against the service
schema, posts it to the service (an in-process ASGI transport by default,
or a remote base URL via --server), and writes the returned artifacts.
Exit codes: 0 on success, 2 when `estimate` reports an unstable verdict,
1 on any error (single machine-parsable line on stderr).
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from pathlib import Path

import httpx
from pydantic import ValidationError

from .service.schemas import (
    ClassifyRequest,
    DriftCheckRequest,
    EstimateRequest,
    SimulateRequest,
    SweepRequest,
)

SUBCOMMANDS = {
    "simulate": ("/v1/simulate", SimulateRequest),
    "classify": ("/v1/classify", ClassifyRequest),
    "sweep": ("/v1/sweep", SweepRequest),
    "drift-check": ("/v1/drift-check", DriftCheckRequest),
    "estimate": ("/v1/estimate", EstimateRequest),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fluidmerge",
        description="Simulate and classify stability of a two-class fluid merge/diverge network.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="JSON config file")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--seed", type=int, default=None, help="override the config seed")
        p.add_argument("--quiet", action="store_true", help="suppress stdout summaries")
        p.add_argument("--server", default=None, help="remote service base URL (default: in-process)")
    serve = sub.add_parser("serve")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _post(path: str, payload: dict, server: str | None) -> dict:
    if server is not None:
        with httpx.Client(base_url=server, timeout=None) as client:
            response = client.post(path, json=payload)
    else:
        from .service.app import app

        async def go():
            transport = httpx.ASGITransport(app=app)
            async with httpx.AsyncClient(
                transport=transport, base_url="http://fluidmerge.local", timeout=None
            ) as client:
                return await client.post(path, json=payload)

        response = asyncio.run(go())
    if response.status_code != 200:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise RuntimeError(f"service returned {response.status_code}: {detail}")
    return response.json()


def _round9(value):
    """Round floats to 9 significant digits, recursively, for stable output."""
    if isinstance(value, float):
        return float(f"{value:.9g}")
    if isinstance(value, dict):
        return {k: _round9(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_round9(v) for v in value]
    return value


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(_round9(payload), indent=2, sort_keys=True) + "\n")


def _trajectory_csv(trajectory: dict | None) -> str:
    columns = trajectory["columns"] if trajectory else (
        "t", "mode", "q1", "q2", "q31", "q32", "f13", "f23", "f34", "f35"
    )
    lines = [",".join(columns)]
    for row in trajectory["rows"] if trajectory else ():
        cells = ["%.9g" % row[0], str(row[1])] + ["%.9g" % v for v in row[2:]]
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


def _sweep_csv(payload: dict) -> str:
    lines = [",".join(payload["columns"])]
    for f3, phi1, b0, b1, b2, verdict in payload["rows"]:
        lines.append("%.9g,%.9g,%d,%d,%d,%s" % (f3, phi1, b0, b1, b2, verdict))
    return "\n".join(lines) + "\n"


def run(command: str, config: dict, out_dir: Path, server: str | None, quiet: bool) -> int:
    """Validate, dispatch, and write artifacts; returns the exit status."""
    path, model = SUBCOMMANDS[command]
    request = model.model_validate(config)  # client-side validation, same schema
    payload = _post(path, request.model_dump(by_alias=True, mode="json"), server)
    out_dir.mkdir(parents=True, exist_ok=True)

    status = 0
    if command == "simulate":
        (out_dir / "trajectory.csv").write_text(_trajectory_csv(payload.get("trajectory")))
        _write_json(out_dir / "stats.json", payload["stats"])
        summary = f"simulate: wrote trajectory.csv and stats.json to {out_dir}"
    elif command == "classify":
        _write_json(out_dir / "classification.json", payload)
        summary = json.dumps(_round9(payload), sort_keys=True)
    elif command == "sweep":
        (out_dir / "sweep.csv").write_text(_sweep_csv(payload))
        summary = f"sweep: wrote {len(payload['rows'])} cells to {out_dir / 'sweep.csv'}"
    elif command == "drift-check":
        _write_json(out_dir / "drift_report.json", payload)
        summary = json.dumps(_round9({k: payload[k] for k in ("cert", "c", "d", "max_lhs", "pass")}),
                             sort_keys=True)
    elif command == "estimate":
        _write_json(out_dir / "estimate.json", payload)
        summary = json.dumps(_round9({k: payload[k] for k in ("verdict", "slope", "bound_estimate")}),
                             sort_keys=True)
        if payload["verdict"] == "unstable":
            status = 2
    else:  # pragma: no cover - parser restricts commands
        raise RuntimeError(f"unknown command {command}")
    if not quiet:
        print(summary)
    return status


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        import uvicorn

        from .service.app import app

        uvicorn.run(app, host=args.host, port=args.port)
        return 0
    try:
        config = json.loads(Path(args.config).read_text())
    except FileNotFoundError:
        print(f"error: config file not found: {args.config}", file=sys.stderr)
        return 1
    except json.JSONDecodeError as exc:
        print(f"error: config is not valid JSON: {exc}", file=sys.stderr)
        return 1
    if args.seed is not None:
        config["seed"] = args.seed
    try:
        return run(args.command, config, Path(args.out), args.server, args.quiet)
    except ValidationError as exc:
        first = exc.errors()[0]
        field = ".".join(str(p) for p in first["loc"])
        print(f"error: {field}: {first['msg']}", file=sys.stderr)
        return 1
    except (RuntimeError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
