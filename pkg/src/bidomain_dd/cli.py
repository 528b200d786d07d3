"""Command-line entry point.

Exit codes: 0 success, 2 configuration error, 3 solver failure.
"""
from __future__ import annotations

import argparse
import configparser
import dataclasses
import logging
import sys

from .experiments import ExperimentConfig, SweepTable, run
from .krylov import KrylovError
from .mesh import ConfigurationError
from .stepper import SolverFailure

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER = 0, 2, 3

_TUPLE_FIELDS = {"mesh", "subs", "slab_extent", "hh_list", "workers", "sweep_primals", "sweep_scalings",
                 "sweep_methods"}
_FLOAT_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig) if f.type == "float"}
_INT_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig) if f.type == "int"}


class _ArgumentError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgumentError(message)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="bidomain-dd", description="Bidomain simulations with BDDC / FETI-DP interface solvers.")
    p.add_argument("--scenario", choices=["single-run", "optimality", "weak", "strong", "beat"])
    p.add_argument("--geometry", choices=["slab", "ellipsoid"])
    p.add_argument("--mesh", nargs=3, type=int, metavar=("NX", "NY", "NZ"))
    p.add_argument("--subs", nargs=3, type=int, metavar=("PX", "PY", "PZ"))
    p.add_argument("--precond", choices=["bddc", "fetidp", "none"])
    p.add_argument("--scaling", choices=["rho", "deluxe"])
    p.add_argument("--primal", choices=["v", "ve", "vef"])
    p.add_argument("--dt", type=float)
    p.add_argument("--t-end", type=float, dest="t_end")
    p.add_argument("--threads", type=int)
    p.add_argument("--out", metavar="DIR")
    p.add_argument("--vtk-every", type=int, dest="vtk_every", metavar="K")
    p.add_argument("--hh", nargs="+", type=int, dest="hh_list", help="local sizes H/h for the optimality sweep")
    p.add_argument("--workers", nargs="+", type=int, help="subdomain/worker counts for scaling runs")
    p.add_argument("--local-size", type=int, dest="local_size")
    p.add_argument("--boundary-split", action="store_const", const=True, dest="boundary_split",
                   help="treat the outer boundary as an extra sharer when classifying the interface")
    p.add_argument("--config", metavar="FILE", help="INI file with an [experiment] section; flags take precedence")
    p.add_argument("-v", "--verbose", action="count", default=0)
    return p


def _convert(name: str, raw: str):
    if name in _TUPLE_FIELDS:
        items = raw.replace(",", " ").split()
        if name in ("slab_extent",):
            return tuple(float(x) for x in items)
        if name.startswith("sweep_"):
            return tuple(items)
        return tuple(int(x) for x in items)
    if name in _FLOAT_FIELDS:
        return float(raw)
    if name in _INT_FIELDS:
        return int(raw)
    if name == "boundary_split":
        return raw.strip().lower() in ("1", "true", "yes", "on")
    return raw.strip()


def read_config_file(path) -> dict:
    cp = configparser.ConfigParser()
    if not cp.read(path):
        raise ConfigurationError(f"cannot read config file {path!r}")
    if not cp.has_section("experiment"):
        raise ConfigurationError(f"{path}: missing [experiment] section")
    known = {f.name for f in dataclasses.fields(ExperimentConfig)}
    out = {}
    for key, raw in cp.items("experiment"):
        name = key.replace("-", "_")
        if name not in known:
            raise ConfigurationError(f"{path}: unknown key {key!r}")
        try:
            out[name] = _convert(name, raw)
        except ValueError as exc:
            raise ConfigurationError(f"{path}: bad value for {key!r}: {raw!r}") from exc
    return out


def config_from_args(argv=None) -> ExperimentConfig:
    args = build_parser().parse_args(argv)
    values = read_config_file(args.config) if args.config else {}
    for k, v in vars(args).items():
        if k in ("config", "verbose") or v is None:
            continue
        values[k] = tuple(v) if isinstance(v, list) else v
    return ExperimentConfig(**values)


def _summary(table) -> str:
    if isinstance(table, SweepTable):
        return table.format()
    a = table.averages()
    return f"{table.label}: steps={a['steps']} nit={a['nit']:.2f} lit={a['lit']:.2f} cond={a['cond']:.3g}"


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(message)s")
        cfg = config_from_args(argv)
    except (_ArgumentError, ConfigurationError, ValueError, TypeError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        table = run(cfg)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (SolverFailure, KrylovError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    print(_summary(table))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
