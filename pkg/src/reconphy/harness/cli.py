"""Command-line entry point: ``reconphy <command> [options]``."""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .. import link as lk
from ..errors import ReconPhyError
from . import experiments as ex
from .config import load_config, parse_seed_list


def _knobs(args) -> ex.Knobs:
    k = ex.Knobs()
    changes = {}
    if args.seed_list:
        changes["seeds"] = parse_seed_list(args.seed_list)
    for name in ("alpha", "alpha1", "alpha2", "mod_threshold", "noise_n0", "N", "equalizer", "int_bits"):
        value = getattr(args, name, None)
        if value is not None:
            changes[name] = value
    if getattr(args, "phy_wl", None):
        changes["phy_numeric"] = args.phy_wl
    return k.replace(**changes)


def _wl_list(text: str | None):
    if not text:
        return ex.DEFAULT_WL
    return tuple(w.strip() for w in text.split(",") if w.strip())


def _print_selection(table: ex.SelectionTable) -> None:
    for dist in table.distributions:
        for wl in table.wl_labels:
            share = table.share[(dist, wl)]
            best = table.best(dist, wl)
            print(f"{dist} {wl:>6}: most pulled arm {best + 1} ({100 * share[best]:.1f}% of slots)")


def _print_policy(table: ex.PolicyTable, unit: str) -> None:
    print("distribution " + " ".join(f"{l:>10}" for l in table.labels))
    for d in table.distributions:
        print(f"{d:<12} " + " ".join(f"{table.value[(d, l)]:>10.2f}" for l in table.labels))
    print(f"{'average':<12} " + " ".join(f"{table.mean(l):>10.2f}" for l in table.labels) + f"  ({unit})")


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed-list", help="seeds, e.g. 1-10 or 1,2,5 (default 1-10)")
    common.add_argument("--out-dir", default="out", help="directory for CSV output (default: out)")
    common.add_argument("--alpha", type=float, help="UCB exploration weight")
    common.add_argument("--alpha1", type=float, help="UCB-V variance weight")
    common.add_argument("--alpha2", type=float, help="UCB-V bias weight")
    common.add_argument("--mod-threshold", dest="mod_threshold", type=float, help="estimate above which 16-QAM is used")
    common.add_argument("--noise-n0", dest="noise_n0", type=float, help="noise power per complex sample")
    common.add_argument("--slots", dest="N", type=int, help="horizon N (slots per run)")
    common.add_argument("--equalizer", choices=("conj", "zf"), help="one-tap equaliser")
    common.add_argument("--int-bits", dest="int_bits", type=int, help="integer bits of the fixed-point split")

    p = argparse.ArgumentParser(prog="reconphy", description="Bandit-driven reconfigurable OFDM link simulator.")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("fig9", "channel selection vs word-length on mu1/mu2"),
                       ("fig10", "channel selection vs word-length on mu3/mu4")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--wl", help="comma-separated word-lengths, e.g. float,27,11,6")
    for name, text in (("fig11", "error %% for oracle/random/bandit channel selection"),
                       ("fig12", "error %% for fixed 16-QAM, fixed QPSK and adaptive modulation"),
                       ("table3", "throughput and transmissions per slot")):
        sp = sub.add_parser(name, parents=[common], help=text)
        sp.add_argument("--wl", dest="phy_wl", help="bandit word-length for link runs (default 11)")
    sub.add_parser("reconfig-demo", parents=[common], help="algorithm and arm-count reconfiguration walk-through")
    sp = sub.add_parser("run", help="run one experiment from an INI config file")
    sp.add_argument("config", type=Path)
    sp.add_argument("--trace", type=Path, help="write the first run's slot trace to this CSV")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            cfg = load_config(args.config)
            res = lk.run_experiment(cfg, keep_slots=args.trace is not None)
            print(f"{cfg.name}: error {res.error_pct:.3f}%  throughput {res.throughput:.2f} Mbps  "
                  f"transmissions {res.avg_transmissions:.2f}")
            print("mean pulls per arm: " + " ".join(f"{p:.1f}" for p in res.mean_pulls))
            if args.trace is not None:
                lk.write_trace(args.trace, lk.slot_reports(res))
            return 0
        knobs = _knobs(args)
        out = args.out_dir
        if args.command == "fig9":
            _print_selection(ex.cmd_fig9(_wl_list(args.wl), knobs, out))
        elif args.command == "fig10":
            _print_selection(ex.cmd_fig10(_wl_list(args.wl), knobs, out))
        elif args.command == "fig11":
            _print_policy(ex.cmd_fig11(knobs, out), "error %")
        elif args.command == "fig12":
            _print_policy(ex.cmd_fig12(knobs, out), "error %")
        elif args.command == "table3":
            t = ex.cmd_table3(knobs, out)
            _print_policy(t, "Mbps")
            print("average transmissions: " + " ".join(f"{l}={t.mean_transmissions(l):.2f}" for l in t.labels))
        elif args.command == "reconfig-demo":
            print("\n".join(ex.cmd_reconfig_demo(knobs, out).transcript))
        return 0
    except (ReconPhyError, ValueError, OSError) as exc:
        print(f"reconphy: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
