"""
Command line entry point.

    python cli.py run configs/crossover.json
    python cli.py audit configs/crossover.json runs/crossover
    python cli.py oracle configs/crossover.json --step 4 --budget 2
    python cli.py serve --port 8000

Exit codes: 0 all enabled audits pass, 1 an audit failed, 2 bad config or
missing artifacts, 3 numerical failure.
"""

import argparse
import json
import os
import sys
from pathlib import Path
from typing import List, Optional

from config import RunConfig, load_config
from errors import ConfigError, FractureError, MissingArtifactError, NumericalFailureError

EXIT_PASS = 0
EXIT_AUDIT_FAILED = 1
EXIT_BAD_INPUT = 2
EXIT_NUMERICAL = 3


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qsf", description="Quasi-static anti-plane fracture simulator")
    sub = parser.add_subparsers(dest="command", required=True)

    def overrides(p):
        p.add_argument("--threads", type=int, help="worker threads for candidate solves")
        p.add_argument("--strategy", choices=["brute", "greedy"], help="override the configured minimizer")
        p.add_argument("--budget", type=int, help="max new edges per step (brute) or per move (greedy)")

    p = sub.add_parser("run", help="run an evolution and its audits")
    p.add_argument("config")
    p.add_argument("--output-dir", help="artifact directory (QSF_OUTPUT_DIR wins)")
    p.add_argument("--quiet", action="store_true")
    overrides(p)

    p = sub.add_parser("audit", help="re-audit a recorded run directory")
    p.add_argument("config")
    p.add_argument("run_dir")
    p.add_argument("--quiet", action="store_true")
    overrides(p)

    p = sub.add_parser("oracle", help="dump the brute-force candidate table of one step")
    p.add_argument("config")
    p.add_argument("--step", type=int, default=0)
    p.add_argument("--output-dir")
    p.add_argument("--quiet", action="store_true")
    overrides(p)

    p = sub.add_parser("serve", help="start the HTTP service")
    p.add_argument("--host", default=os.getenv("HOST", "0.0.0.0"))
    p.add_argument("--port", type=int, default=int(os.getenv("PORT", 8000)))
    return parser


def apply_overrides(config: RunConfig, args: argparse.Namespace) -> RunConfig:
    """Command line flags replace the matching config fields"""
    strategy = {}
    if args.strategy is not None:
        strategy["kind"] = args.strategy
    if args.budget is not None:
        if args.budget < 0:
            raise ConfigError(f"--budget must be >= 0, got {args.budget}", ["--budget: must be >= 0"])
        if (args.strategy or config.strategy.kind) == "brute":
            strategy["budget"] = args.budget
        else:
            strategy["depth"] = max(args.budget, 1)
    update = {}
    if strategy:
        update["strategy"] = config.strategy.model_copy(update=strategy)
    if args.threads is not None:
        if args.threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {args.threads}", ["--threads: must be >= 1"])
        update["threads"] = args.threads
    return config.model_copy(update=update) if update else config


def _serve(host: str, port: int) -> int:
    import uvicorn

    from server import app

    print(f"API available at: http://{host}:{port}")
    print(f"Health check: http://{host}:{port}/health")
    uvicorn.run(app, host=host, port=port)
    return EXIT_PASS


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "serve":
        return _serve(args.host, args.port)

    import runner

    verbose = not args.quiet
    try:
        config = apply_overrides(load_config(args.config), args)
        if args.command == "run":
            text = Path(args.config).read_text()
            summary = runner.run_from_config(config, text, output_dir=args.output_dir, verbose=verbose)
            return EXIT_PASS if summary["passed"] else EXIT_AUDIT_FAILED
        if args.command == "audit":
            verdict = runner.audit_run_dir(config, args.run_dir, verbose=verbose)
            print(json.dumps({"passed": verdict["passed"], "failed": verdict["failed"]}))
            return EXIT_PASS if verdict["passed"] else EXIT_AUDIT_FAILED
        runner.oracle_table(config, step=args.step, budget=args.budget, output_dir=args.output_dir, verbose=verbose)
        return EXIT_PASS
    except (ConfigError, MissingArtifactError) as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except NumericalFailureError as e:
        print(f"❌ Numerical failure: {e}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FractureError as e:
        print(f"❌ {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_BAD_INPUT


if __name__ == "__main__":
    sys.exit(main())
