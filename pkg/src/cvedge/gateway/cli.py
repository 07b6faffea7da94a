"""Headless command line: run one scenario, sweep a mobile-count list, or
serve the gateway API for the web console."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from ..harness.engine import run_scenario, run_sweep
from ..harness.scenario import Scenario, ScenarioError


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cvedge", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="execute one scenario and write its report")
    run_p.add_argument("--scenario", required=True, help="scenario JSON file")
    run_p.add_argument("--out", required=True, help="output directory")
    run_p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
    run_p.add_argument("--clock", choices=["virtual", "wall"], default=None)
    run_p.add_argument(
        "--format", choices=["csv", "json", "both"], default="both", help="report format"
    )

    sweep_p = sub.add_parser("sweep", help="run a mobile-count scalability sweep")
    sweep_p.add_argument("--template", required=True, help="scenario JSON template")
    sweep_p.add_argument(
        "--mobile", required=True, help="comma-separated mobile-edge counts, e.g. 5,10,20"
    )
    sweep_p.add_argument("--fixed", type=int, default=1, help="fixed edges per point")
    sweep_p.add_argument("--seeds", type=int, default=4, help="runs per point")
    sweep_p.add_argument("--out", required=True, help="output directory")

    serve_p = sub.add_parser("serve", help="serve the gateway API for the console")
    serve_p.add_argument("--host", default="127.0.0.1")
    serve_p.add_argument("--port", type=int, default=8400)
    serve_p.add_argument("--policies", default=None, help="flow policy JSON file")
    serve_p.add_argument("--manifests", default=None, help="access manifest JSON file")
    serve_p.add_argument(
        "--credentials",
        default=None,
        help='console credentials JSON file: [{"username": ..., "password": ...}]',
    )
    return parser


def cmd_run(args: argparse.Namespace) -> int:
    scenario = Scenario.load(Path(args.scenario))
    if args.seed is not None:
        scenario.seed = args.seed
    if args.clock is not None:
        scenario.clock = args.clock
    scenario.validate()
    formats = ("csv", "json") if args.format == "both" else (args.format,)
    result = run_scenario(scenario, out_dir=Path(args.out), formats=formats)
    delivery = result.report.classes.get("delivery")
    print(
        f"{scenario.name}: {delivery.sample_count if delivery else 0} delivery samples, "
        f"{result.report.warnings_emitted} warnings, "
        f"{result.report.quarantined} quarantined, "
        f"throughput {result.report.throughput_mbps:.6f} Mbit/s"
    )
    return 0


def cmd_sweep(args: argparse.Namespace) -> int:
    template = Scenario.load(Path(args.template))
    try:
        counts = [int(x) for x in args.mobile.split(",") if x.strip()]
    except ValueError:
        raise ScenarioError(f"bad --mobile list: {args.mobile!r}") from None
    if not counts:
        raise ScenarioError("--mobile list is empty")
    pooled, _ = run_sweep(
        template, counts, n_fixed=args.fixed, seeds=args.seeds, out_dir=Path(args.out)
    )
    for report in pooled:
        delivery = report.classes["delivery"]
        print(
            f"{report.scenario}: n_mobile={report.n_mobile} "
            f"avg={delivery.avg_ms:.1f}ms max={delivery.max_ms:.1f}ms "
            f"throughput={report.throughput_mbps:.6f}Mbit/s "
            f"pass={'true' if report.pass_flags.get('delivery') else 'false'}"
        )
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .api import GatewayConfig, create_app, load_manifests_file, load_policies_file

    users = {"developer": "devpass"}
    if args.credentials:
        creds = json.loads(Path(args.credentials).read_text(encoding="utf-8"))
        users = {c["username"]: c["password"] for c in creds}
    config = GatewayConfig(
        users=users,
        default_policies=load_policies_file(args.policies) if args.policies else None,
        default_manifests=load_manifests_file(args.manifests) if args.manifests else None,
    )
    app = create_app(config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "sweep":
            return cmd_sweep(args)
        if args.command == "serve":
            return cmd_serve(args)
    except (ScenarioError, FileNotFoundError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    parser.error(f"unknown command {args.command!r}")
    return 2


if __name__ == "__main__":
    sys.exit(main())
