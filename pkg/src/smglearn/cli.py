"""Command-line entry point: ``smglearn <subcommand>``.

Exit codes: 0 success, 2 config error, 3 numeric failure, 4 integrity error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from smglearn import harness
from smglearn.errors import SMGError
from smglearn.sitegen import default_stream, export_site, generate_site

log = logging.getLogger("smglearn")


def _gen_data(args) -> int:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for spec in default_stream(args.sites, args.seed):
        path = out / f"site_{spec.site_id}.bin"
        export_site(generate_site(spec), path)
        log.info("wrote %s (%d subjects)", path, spec.n_subjects)
    return 0


def _run(args) -> int:
    config = harness.RunConfig.from_json(args.config)
    res = harness.run_stream(config, args.out, resume=args.resume)
    print(json.dumps(res.manifest["summary"], indent=2))
    return 0


def _ft_reference(args) -> int:
    result = harness.run_ft_reference(args.run, iterations=args.iterations)
    print(json.dumps(result, indent=2))
    return 0


def _seq_study(args) -> int:
    config = harness.RunConfig.from_json(args.config)
    out = args.out or f"seq_study_{config.method}"
    rows = harness.run_sequence_length_study(config, out)
    for r in rows:
        print(f"round {r['round']}: first-site DSC {r['first_site_dsc']:.4f}  "
              f"held-out DSC {r['held_out_dsc']:.4f}")
    return 0


def _compare(args) -> int:
    rows = harness.compare_report(args.runs, args.out)
    cols = ["method", *harness.COMPARE_METRICS]
    print("\t".join(cols))
    for r in rows:
        print("\t".join(r["method"] if c == "method" else
                        ("-" if r[c] is None else f"{r[c]:.4f}") for c in cols))
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="smglearn", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="export the synthetic site stream")
    g.add_argument("--sites", type=int, default=6)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.set_defaults(func=_gen_data)

    r = sub.add_parser("run", help="train one method over the stream")
    r.add_argument("--config", required=True)
    r.add_argument("--out", required=True)
    r.add_argument("--resume", action="store_true")
    r.set_defaults(func=_run)

    f = sub.add_parser("ft-reference", help="held-out reference round for forward transfer")
    f.add_argument("--run", required=True)
    f.add_argument("--iterations", type=int, default=None)
    f.set_defaults(func=_ft_reference)

    s = sub.add_parser("seq-study", help="first-site / held-out curves per round")
    s.add_argument("--config", required=True)
    s.add_argument("--out", default=None)
    s.set_defaults(func=_seq_study)

    c = sub.add_parser("compare", help="BM/BT/FM/FT table across runs")
    c.add_argument("--runs", nargs="+", required=True)
    c.add_argument("--out", required=True)
    c.set_defaults(func=_compare)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except SMGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
