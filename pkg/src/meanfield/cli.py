"""Command-line entry point.  Exit codes: 0 success, 2 bad input, 3 size budget exceeded."""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import warnings

from . import graph_combinatorics as gc
from .dispersive_oracle import KatoQuery, kato_report
from .errors import BudgetExceeded, ConfigError
from .meanfield_lab import (load_config, records_to_csv, records_to_json, run_egorov_sweep,
                            run_expansion, run_marginal_convergence, trajectory_csv, trajectory_rows)

EXIT_OK, EXIT_CONFIG, EXIT_BUDGET = 0, 2, 3


def _rows_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if rows:
        w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        for r in rows:
            w.writerow({k: "" if v is None else v for k, v in r.items()})
    return buf.getvalue()


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def cmd_graphs_count(args) -> str:
    p, k, l, m = args.p, args.k, args.l, args.m
    row = {"p": p, "k": k, "l": l, "m": m,
           "structures": gc.count_structures(p, k, l, m),
           "elementary_terms": gc.elementary_count(p, k, l, m)}
    if m is None:
        row["structure_bound"] = gc.loop_structure_bound(p, k, l)
        row["elementary_bound"] = gc.elementary_term_bound(p, k, l)
        row["tree_closed_form"] = gc.tree_structure_count(p, k) if l == 0 else None
    else:
        row["structure_bound"] = gc.potential_structure_bound(p, k, l, m)
    return _rows_csv([row]) if args.format == "csv" else _dump(row)


def cmd_graphs_catalan(args) -> str:
    row = {"m": args.m, "n": args.n, "catalan": gc.catalan(args.m, args.n),
           "recursion_sum": gc.catalan_recursion_sum(args.m, args.n) if args.n >= 1 else None}
    return _rows_csv([row]) if args.format == "csv" else _dump(row)


def cmd_kato(args) -> str:
    rep = kato_report(KatoQuery(args.d, gamma=args.gamma))
    return _rows_csv([rep]) if args.format == "csv" else _dump(rep)


def _sweep_output(res, args) -> str:
    if args.format == "csv":
        return records_to_csv(res.records, args.timing)
    slopes = {repr(t): s for t, s in res.slopes.items()}
    return records_to_json(res.records, args.timing, {"slopes": slopes})


def cmd_egorov(args) -> str:
    return _sweep_output(run_egorov_sweep(args.cfg), args)


def cmd_marginals(args) -> str:
    return _sweep_output(run_marginal_convergence(args.cfg), args)


def cmd_expand(args) -> str:
    reports = run_expansion(args.cfg)
    if args.format == "json":
        return _dump(reports)
    rows = [{"N": r["N"], "n": r["n"], "t": r["t"], "K": r["K"], "L": r["L"],
             "error_vs_exact": r["error_vs_exact"],
             "bounded_threshold": r["thresholds"]["bounded_threshold"],
             "tail_estimate": r["thresholds"]["tail_estimate"]} for r in reports]
    return _rows_csv(rows)


def cmd_hartree(args) -> str:
    rows = trajectory_rows(args.cfg)
    return trajectory_csv(rows) if args.format == "csv" else _dump(rows)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="top-level seed for seeded config entries")
    common.add_argument("--out", help="output file (default: config output_path, else stdout)")
    common.add_argument("--format", choices=("json", "csv"), default="json")
    common.add_argument("--timing", action="store_true",
                        help="include wall-clock columns (output is then not reproducible byte for byte)")

    parser = argparse.ArgumentParser(prog="meanfield", parents=[common],
                                     description="Mean-field experiments on finite mode spaces.")
    sub = parser.add_subparsers(dest="command", required=True)

    graphs = sub.add_parser("graphs", help="graph and tree counting").add_subparsers(
        dest="action", required=True)
    g = graphs.add_parser("count", parents=[common])
    g.add_argument("--p", type=int, required=True)
    g.add_argument("--k", type=int, required=True)
    g.add_argument("--l", type=int, required=True)
    g.add_argument("--m", type=int, default=None, help="number of potential vertices")
    g.set_defaults(func=cmd_graphs_count)
    g = graphs.add_parser("catalan", parents=[common])
    g.add_argument("--m", type=int, required=True)
    g.add_argument("--n", type=int, required=True)
    g.set_defaults(func=cmd_graphs_catalan)

    def with_config(p, func):
        p.add_argument("--config", required=True)
        p.set_defaults(func=func, needs_config=True)

    dyn = sub.add_parser("dyn").add_subparsers(dest="action", required=True)
    with_config(dyn.add_parser("expand", parents=[common]), cmd_expand)
    eg = sub.add_parser("egorov").add_subparsers(dest="action", required=True)
    with_config(eg.add_parser("sweep", parents=[common]), cmd_egorov)
    with_config(sub.add_parser("marginals", parents=[common]), cmd_marginals)
    hf = sub.add_parser("hartree").add_subparsers(dest="action", required=True)
    with_config(hf.add_parser("evolve", parents=[common]), cmd_hartree)

    kato = sub.add_parser("kato").add_subparsers(dest="action", required=True)
    k = kato.add_parser("check", parents=[common])
    k.add_argument("--d", type=int, required=True)
    k.add_argument("--gamma", type=float, default=None)
    k.set_defaults(func=cmd_kato)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    out = args.out
    try:
        if getattr(args, "needs_config", False):
            args.cfg = load_config(args.config, seed=args.seed)
            out = out or args.cfg.output_path
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always", RuntimeWarning)
            text = args.func(args)
        for w in caught:
            print(f"warning: {w.message}", file=sys.stderr)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except BudgetExceeded as err:
        print(f"budget exceeded: {err}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as err:
        print(f"invalid input: {err}", file=sys.stderr)
        return EXIT_CONFIG
    if out:
        with open(out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
