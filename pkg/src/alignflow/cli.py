"""Command-line entry point ``sim``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure, 3 I/O error.
"""
from __future__ import annotations

import argparse
import json
import sys
from importlib import resources
from pathlib import Path

from . import __version__
from .config import canonical_json, load_config, resolve
from .errors import AlignflowError, ConfigError
from .kernels import from_spec, validate
from .measures import AtomicMeasure

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_IO = 1, 2, 3


def shipped_scenarios_dir() -> Path:
    return Path(str(resources.files("alignflow").joinpath("scenarios")))


def list_scenarios(directory=None) -> list[dict]:
    """Catalogue entries ``{file, name, mode, description, error}`` sorted by file name."""
    d = Path(directory) if directory is not None else shipped_scenarios_dir()
    out = []
    for path in sorted(d.glob("*.json")):
        entry = {"file": path.name, "name": path.stem, "mode": "", "description": "", "error": ""}
        try:
            cfg = json.loads(path.read_text())
            entry.update(name=cfg.get("name", path.stem), mode=cfg.get("mode", ""),
                         description=cfg.get("description", ""))
        except (OSError, ValueError, AttributeError) as exc:
            entry["error"] = str(exc)
        out.append(entry)
    return out


def _cmd_list(args) -> int:
    for e in list_scenarios(args.dir):
        if e["error"]:
            print(f"{e['file']}\t[PARSE ERROR] {e['error']}")
        else:
            print(f"{e['name']}\t{e['mode']}\t{e['description']}")
    return 0


def _cmd_run(args) -> int:
    from .runner import run

    path = Path(args.config)
    if not path.exists():
        cand = shipped_scenarios_dir() / f"{args.config}.json"
        if cand.exists():
            path = cand
    raw = load_config(path)
    cfg = resolve(raw, args.seed)
    out = args.out or raw.get("output_dir") or f"out/{cfg['name']}"
    try:
        result = run(cfg, out)
    except AlignflowError as exc:
        exc.args = (f"scenario {cfg['name']!r}: {exc}",) + exc.args[1:]
        raise
    print(canonical_json({"out": str(out), "summary": result.summary}), end="")
    return 0


def _cmd_metrics(args) -> int:
    from .runner import json_text, metrics_between

    a = AtomicMeasure.from_json(json.loads(Path(args.a).read_text()))
    b = AtomicMeasure.from_json(json.loads(Path(args.b).read_text()))
    print(json_text(metrics_between(a, b)), end="")
    return 0


def _cmd_validate_kernel(args) -> int:
    try:
        spec = json.loads(Path(args.spec).read_text())
    except ValueError as exc:
        raise ConfigError(f"{args.spec}: invalid JSON: {exc}") from exc
    report = validate(from_spec(spec))
    print(canonical_json(report.to_dict()), end="")
    return 0 if report.passed else EXIT_NUMERICAL


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="sim", description="Euler-alignment / nonlocal ARZ experiments")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario config")
    r.add_argument("config", help="config path or shipped scenario name")
    r.add_argument("--out", help="output directory")
    r.add_argument("--seed", type=int, help="override the config seed")
    r.set_defaults(func=_cmd_run)

    m = sub.add_parser("metrics", help="distances between two measure JSON files")
    m.add_argument("a")
    m.add_argument("b")
    m.set_defaults(func=_cmd_metrics)

    ls = sub.add_parser("list", help="list scenarios")
    ls.add_argument("--dir", help="scenario directory (default: shipped)")
    ls.set_defaults(func=_cmd_list)

    v = sub.add_parser("validate-kernel", help="check a kernel spec against its declared flags")
    v.add_argument("spec")
    v.set_defaults(func=_cmd_validate_kernel)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except AlignflowError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
