"""Command-line front end.

    lesionloop phantom --count N --seed S --out DIR
    lesionloop split --manifest M --test-frac 0.2 --seed S --out split.json
    lesionloop run --system {1|2|3} --iterations N --segmenter NAME \
                   --manifest M --split F --out DIR
    lesionloop eval --report DIR
    lesionloop serve --addr HOST:PORT --manifest M

``run`` also accepts --config FILE with a JSON body mirroring the
programmatic experiment configuration; explicit flags override it.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


def _cmd_phantom(args) -> int:
    from .volumes import PhantomSpec, build_phantom_dataset

    spec = PhantomSpec(
        dims=tuple(args.dims),
        n_artifacts=(0, args.artifacts) if args.artifacts else 0,
    )
    entries = build_phantom_dataset(args.out, args.count, args.seed, spec)
    print(f"wrote {len(entries)} phantoms to {args.out}")
    return 0


def _cmd_split(args) -> int:
    from .runner import SplitSpec, save_split, split_dataset
    from .volumes import load_manifest

    manifest = load_manifest(args.manifest)
    train, test = split_dataset(
        manifest, SplitSpec(test_fraction=args.test_frac, seed=args.seed)
    )
    save_split(train, test, args.out, seed=args.seed)
    print(f"{len(train)} train / {len(test)} test -> {args.out}")
    return 0


def _cmd_run(args) -> int:
    from .runner import run_experiment

    config = {}
    if args.config:
        config = json.loads(Path(args.config).read_text())
    if args.system is not None:
        config["system"] = args.system
    if args.iterations is not None:
        config["iterations"] = args.iterations
    if args.segmenter:
        if config.get("system") == 1:
            config["initial"] = args.segmenter
        else:
            config["refinement"] = args.segmenter
    if args.initial:
        config["initial"] = args.initial
    if args.manifest:
        config["manifest"] = args.manifest
    if args.split:
        config["split"] = args.split
    if args.seed is not None:
        config["seed"] = args.seed
    if args.out:
        config["out"] = args.out
    out = run_experiment(config)
    print(f"report written to {out}")
    return 0


def _cmd_eval(args) -> int:
    from .metrics import load_summary_json

    summary_path = Path(args.report) / "summary.json"
    if not summary_path.exists():
        print(f"no summary.json under {args.report}", file=sys.stderr)
        return 1
    print(json.dumps(load_summary_json(summary_path), indent=2, sort_keys=True))
    return 0


def _cmd_serve(args) -> int:
    from .service import serve

    serve(args.addr, args.manifest, log_dir=args.log_dir)
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="lesionloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("phantom", help="generate a synthetic phantom dataset")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--dims", type=int, nargs=3, default=[64, 64, 16],
                   metavar=("H", "W", "N"))
    p.add_argument("--artifacts", type=int, default=0,
                   help="max bright non-lesion blobs per phantom")
    p.set_defaults(func=_cmd_phantom)

    p = sub.add_parser("split", help="patient-grouped stratified split")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-frac", type=float, default=0.2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_split)

    p = sub.add_parser("run", help="run a system over a split and write a report")
    p.add_argument("--system", type=int, choices=[1, 2, 3])
    p.add_argument("--iterations", type=int)
    p.add_argument("--segmenter",
                   help="threshold|conservative|oracle|plugin:CMD")
    p.add_argument("--initial", help="initial segmenter for systems 1 and 3")
    p.add_argument("--manifest")
    p.add_argument("--split")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.add_argument("--config", help="JSON experiment config; flags override")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("eval", help="print the summary of an existing report")
    p.add_argument("--report", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("serve", help="serve the HTTP session API")
    p.add_argument("--addr", default="127.0.0.1:8008")
    p.add_argument("--manifest", required=True)
    p.add_argument("--log-dir", default=None)
    p.set_defaults(func=_cmd_serve)

    args = parser.parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
