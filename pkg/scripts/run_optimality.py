#!/usr/bin/env python3
"""Optimality sweep on the 4x4x4 slab decomposition: every (method, scaling, primal) on shared Newton systems.

    python3 scripts/run_optimality.py --hh 4 8 12 --out results/optimality
"""
import argparse
import logging

from bidomain_dd.experiments import ExperimentConfig, emit_outputs, run_optimality


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--hh", nargs="+", type=int, default=[4, 8, 12])
    ap.add_argument("--subs", nargs=3, type=int, default=[4, 4, 4])
    ap.add_argument("--primals", nargs="+", default=["v", "ve", "vef"])
    ap.add_argument("--t-end", type=float, default=2.0)
    ap.add_argument("--probe-every", type=int, default=0)
    ap.add_argument("--no-boundary-split", action="store_true")
    ap.add_argument("--trajectory", choices=["monolithic", "dd"], default="monolithic")
    ap.add_argument("--out", default="results/optimality")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")
    cfg = ExperimentConfig(scenario="optimality", subs=tuple(args.subs), hh_list=tuple(args.hh),
                           sweep_primals=tuple(args.primals), t_end=args.t_end, probe_every=args.probe_every,
                           boundary_split=not args.no_boundary_split, out=args.out)
    table = run_optimality(cfg, trajectory=args.trajectory)
    emit_outputs(table, args.out, cfg)
    print(table.format())


if __name__ == "__main__":
    main()
