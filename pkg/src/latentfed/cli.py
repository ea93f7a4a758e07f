"""Command-line entry point.

``run``, ``preset`` and ``summarize`` execute in-process by default so that
artifacts are reproducible without any server; pass ``--server URL`` to route
``run``/``summarize`` through a running service instead. ``serve`` starts the
HTTP API.
"""
from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

from .errors import LatentFedError
from .experiments import (
    apply_overrides,
    emit_config,
    format_summary_table,
    parse_config,
    run_experiment,
    summarize,
)
from .presets import get_preset, preset_names


def _add_override_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=None, help="override base seed")
    p.add_argument("--rounds", type=int, default=None, help="override round count")
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="override regularizer weight")
    p.add_argument("--distance", choices=["sq", "l2"], default=None,
                   help="override distance kind")
    p.add_argument("--topology", default=None,
                   choices=["ring", "complete", "erdos_renyi", "star_ps"],
                   help="override topology kind")
    p.add_argument("--gamma", type=int, default=None,
                   help="override byzantine client count")
    p.add_argument("--runs", type=int, default=None,
                   help="override Monte Carlo run count")
    p.add_argument("--method", default=None,
                   choices=["latent_consensus", "local_only", "modality_fedavg"],
                   help="override training method")


def _overrides_from(args: argparse.Namespace) -> dict:
    pairs = {
        "seed": args.seed, "rounds": args.rounds, "lambda": args.lam,
        "distance": args.distance, "topology": args.topology,
        "gamma": args.gamma, "runs": args.runs, "method": args.method,
    }
    return {k: v for k, v in pairs.items() if v is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="latentfed",
        description="Multi-modal federated learning simulator with latent consensus",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config", help="path to a YAML experiment config")
    p_run.add_argument("--out", default=None, help="output directory (default: runs/<name>)")
    p_run.add_argument("--server", default=None, help="run via a service instead of in-process")
    _add_override_flags(p_run)

    p_preset = sub.add_parser("preset", help="write a named preset config to a file")
    p_preset.add_argument("name", choices=preset_names())
    p_preset.add_argument("--out", required=True, help="path for the YAML file")

    p_sum = sub.add_parser("summarize", help="compare completed run directories")
    p_sum.add_argument("dirs", nargs="+", help="run directories with summary.json")
    p_sum.add_argument("--json", dest="json_out", default=None,
                       help="also write the comparison table as JSON")
    p_sum.add_argument("--server", default=None, help="summarize via a service")

    p_serve = sub.add_parser("serve", help="start the HTTP service")
    p_serve.add_argument("--host", default="127.0.0.1")
    p_serve.add_argument("--port", type=int, default=8000)
    p_serve.add_argument("--workspace", default="runs",
                         help="directory the service reads/writes experiments in")
    return parser


def _cmd_run(args: argparse.Namespace) -> int:
    cfg = parse_config(args.config)
    cfg = apply_overrides(cfg, _overrides_from(args))
    out = Path(args.out) if args.out else Path("runs") / cfg.name
    if args.server:
        return _cmd_run_remote(args, cfg, out)
    summary = run_experiment(cfg, out)
    print(f"wrote artifacts to {out}")
    print(json.dumps(summary, indent=2))
    return 0


def _cmd_run_remote(args: argparse.Namespace, cfg, out: Path) -> int:
    import httpx

    from .experiments import config_to_dict

    base = args.server.rstrip("/")
    payload = {"config": config_to_dict(cfg), "out_name": str(out.name)}
    with httpx.Client(base_url=base, timeout=30.0) as client:
        resp = client.post("/experiments", json=payload)
        resp.raise_for_status()
        job_id = resp.json()["job_id"]
        print(f"submitted job {job_id}")
        while True:
            info = client.get(f"/experiments/{job_id}").json()
            if info["status"] in ("done", "failed"):
                break
            time.sleep(0.5)
    if info["status"] == "failed":
        print(f"job failed: {info['error']}", file=sys.stderr)
        return 1
    print(json.dumps(info["summary"], indent=2))
    return 0


def _cmd_preset(args: argparse.Namespace) -> int:
    cfg = get_preset(args.name)
    Path(args.out).write_text(emit_config(cfg))
    print(f"wrote preset {args.name!r} to {args.out}")
    return 0


def _cmd_summarize(args: argparse.Namespace) -> int:
    if args.server:
        import httpx

        base = args.server.rstrip("/")
        with httpx.Client(base_url=base, timeout=30.0) as client:
            resp = client.post("/summarize", json={"run_dirs": args.dirs})
            resp.raise_for_status()
            table = resp.json()
    else:
        table = summarize(args.dirs)
    print(format_summary_table(table))
    if args.json_out:
        Path(args.json_out).write_text(json.dumps(table, indent=2) + "\n")
    return 0


def _cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service.app import create_app

    app = create_app(Path(args.workspace))
    uvicorn.run(app, host=args.host, port=args.port)
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    handlers = {
        "run": _cmd_run,
        "preset": _cmd_preset,
        "summarize": _cmd_summarize,
        "serve": _cmd_serve,
    }
    try:
        return handlers[args.command](args)
    except LatentFedError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
