"""Admin CLI: serve the gateway, run evaluations and simulations, manage the
registry, inspect journals."""

from __future__ import annotations

import argparse
import json
import os
import signal
import subprocess
import sys
from pathlib import Path

from .config import PerosConfig, data_path


def _load_config(args) -> PerosConfig:
    return PerosConfig.load(getattr(args, "config", None))


def cmd_serve(args) -> int:
    import uvicorn

    config = _load_config(args)
    config.ensure_dirs()
    if not args.split:
        from .gateway import create_app
        uvicorn.run(create_app(config), host=args.host, port=args.port,
                    log_level="warning")
        return 0

    # split mode: each component in its own process, gateway proxying to them
    components = ("interpreter", "director", "actuator", "evaluator")
    procs: list[subprocess.Popen] = []
    urls: dict[str, str] = {}
    try:
        for offset, name in enumerate(components, start=1):
            port = args.port + offset
            urls[name] = f"http://{args.host}:{port}"
            procs.append(subprocess.Popen(
                [sys.executable, "-m", "peros.cli", "component", name,
                 "--host", args.host, "--port", str(port)]
                + (["--config", args.config] if args.config else []),
                env=os.environ.copy(),
            ))
        from .gateway import GatewayRuntime, create_app
        from .services import HttpComponents
        runtime = GatewayRuntime(config, components=HttpComponents(urls))
        print(f"gateway on {args.host}:{args.port}, components: {urls}")
        uvicorn.run(create_app(runtime=runtime), host=args.host,
                    port=args.port, log_level="warning")
        return 0
    finally:
        for proc in procs:
            proc.send_signal(signal.SIGTERM)
        for proc in procs:
            proc.wait(timeout=10)


def cmd_component(args) -> int:
    import uvicorn

    from .services import create_component_app
    config = _load_config(args)
    app = create_component_app(args.name, config)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_eval(args) -> int:
    from .evaluation import Corpus, evaluate
    from .model import ApiRegistry
    from .pipeline import LanguageStack, RulePipeline

    config = _load_config(args)
    config.ensure_dirs()
    corpus_path = Path(args.corpus) if args.corpus else data_path(
        "corpus", "basic.ndjson")
    registry = ApiRegistry.load(config.registry_file())
    stack = LanguageStack(config.grammar_dir())
    report = evaluate(Corpus.load(corpus_path), RulePipeline(stack, registry))
    out = json.dumps(report.to_json(), indent=2)
    config.reports_dir.mkdir(parents=True, exist_ok=True)
    dest = config.reports_dir / f"eval-cli-{report.created_ms}.json"
    dest.write_text(out + "\n")
    print(out)
    print(f"\nreport written to {dest}", file=sys.stderr)
    return 0


def cmd_sim(args) -> int:
    from .storage.simulate import SimConfig, simulate
    from .storage.trace import load_trace

    trace = load_trace(args.trace)
    cfg = SimConfig.load(args.sim_config) if args.sim_config else SimConfig()
    report = simulate(trace, cfg)
    out = json.dumps(report.to_json(), indent=2)
    if args.out:
        Path(args.out).write_text(out + "\n")
    print(out)
    return 0


def cmd_registry_add(args) -> int:
    from .model import ApiRegistry, ApiSpec

    config = _load_config(args)
    target = Path(args.registry) if args.registry else config.registry_file()
    registry = ApiRegistry.load(target)
    added = []
    for file in args.files:
        doc = json.loads(Path(file).read_text())
        specs = doc["apis"] if "apis" in doc else [doc]
        for entry in specs:
            spec = ApiSpec.from_json(entry)
            registry = registry.with_api(spec)
            added.append(spec.name)
    if args.registry is None and config.registry_path is None:
        # never rewrite the shipped data file in place
        target = config.home / "registry.json"
    registry.save(target)
    print(f"registry v{registry.version} -> {target} (+{', '.join(added)})")
    return 0


def cmd_replay(args) -> int:
    from .actuator import ExecutionJournal, Workspace, load_tree, revert

    journal = ExecutionJournal.load(args.journal)
    print(f"plan {journal.plan_id} on {journal.workspace_root}")
    print(f"base tree {journal.base_tree[:12]}")
    for e in journal.entries:
        took = max(e.finished_ms - e.started_ms, 0)
        print(f"  step {e.step_index:>2} {e.api:<20} {e.outcome:<8} "
              f"{took:>5} ms  {e.detail.splitlines()[0] if e.detail else ''}")
    if args.revert:
        ws = Workspace.attach(journal.workspace_root)
        out = revert(journal, ws)
        print(f"revert: {out['status']} (tree {out['restored_tree'][:12]})")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="peros",
        description="declarative operation planner with a sandboxed executor "
                    "and storage-tuning simulators",
    )
    parser.add_argument("--config", default=None,
                        help="config JSON (default: $PEROS_CONFIG or built-ins)")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the HTTP gateway")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--split", action="store_true",
                   help="run components as separate processes over HTTP")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("component", help="run one component service")
    p.add_argument("name", choices=["interpreter", "director", "actuator",
                                    "evaluator"])
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, required=True)
    p.set_defaults(func=cmd_component)

    p = sub.add_parser("eval", help="evaluate the rule pipeline on a corpus")
    p.add_argument("--corpus", default=None, help="NDJSON corpus path")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sim", help="run the storage simulator on a trace")
    p.add_argument("--trace", required=True, help="CSV access trace")
    p.add_argument("--config", dest="sim_config", default=None,
                   help="simulator config JSON")
    p.add_argument("--out", default=None, help="write the report here")
    p.set_defaults(func=cmd_sim)

    p = sub.add_parser("registry", help="registry management")
    rsub = p.add_subparsers(dest="registry_command", required=True)
    pa = rsub.add_parser("add", help="add API specs from JSON files")
    pa.add_argument("files", nargs="+")
    pa.add_argument("--registry", default=None,
                    help="registry file to update (default: config registry)")
    pa.set_defaults(func=cmd_registry_add)

    p = sub.add_parser("replay", help="print a journal; optionally revert it")
    p.add_argument("--journal", required=True)
    p.add_argument("--revert", action="store_true")
    p.set_defaults(func=cmd_replay)

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
