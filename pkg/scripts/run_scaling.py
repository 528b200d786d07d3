#!/usr/bin/env python3
"""Weak or strong scaling over subdomain/thread counts.

    python3 scripts/run_scaling.py weak --workers 2 4 8 --local-size 8
    python3 scripts/run_scaling.py strong --workers 2 4 8 --mesh 32 32 8
"""
import argparse

from bidomain_dd.experiments import ExperimentConfig, emit_outputs, run_scaling


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("mode", choices=["weak", "strong"])
    ap.add_argument("--workers", nargs="+", type=int, default=[2, 4, 8])
    ap.add_argument("--local-size", type=int, default=8)
    ap.add_argument("--mesh", nargs=3, type=int, default=[32, 32, 8])
    ap.add_argument("--precond", choices=["bddc", "fetidp"], default="bddc")
    ap.add_argument("--t-end", type=float, default=0.5)
    ap.add_argument("--out", default=None)
    args = ap.parse_args()
    cfg = ExperimentConfig(scenario=args.mode, workers=tuple(args.workers), local_size=args.local_size,
                           mesh=tuple(args.mesh), precond=args.precond, t_end=args.t_end)
    table = run_scaling(cfg, args.mode)
    print("N  mesh            nit   lit    cond   wall_s  speedup")
    for r in table.rows:
        n = r.step
        print(f"{n:<3d}{str(table.meta['mesh'][n]):16s}{table.meta['nit'][n]:5.2f}{r.lit_avg:7.2f}"
              f"{r.cond_est:8.3f}{r.wall_ms / 1e3:9.1f}{table.meta['speedup'][n]:8.2f}")
    if args.out:
        emit_outputs(table, args.out, cfg)


if __name__ == "__main__":
    main()
