"""Experiment drivers: single runs, the optimality sweep, scaling runs and whole beats.

Every driver advances one trajectory with a "trajectory" linear solver and can
additionally "probe" selected Newton systems with other preconditioner
variants.  A probe solves the very same linear system (same Jacobian, same
right-hand side) as the trajectory, so iteration counts and condition
estimates of all variants are comparable step by step.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import os
import subprocess
import time
from dataclasses import dataclass, field

import numpy as np

from .dualprimal import DDConfig, DualPrimalSolver, SharedFactors
from .fem import ElementMatrices
from .ionic import MembraneParams
from .krylov import KrylovConfig, KrylovError, pcg
from .mesh import ConductivityTensors, ConfigurationError, MeshConfig, build_mesh
from .stepper import (BidomainProblem, BidomainState, LinearResult, MonolithicCG, NewtonConfig, SolverFailure,
                      Stimulus, SystemParams, advance_time_step, project_out_constant)
from .topology import partition_box

log = logging.getLogger(__name__)

SCENARIOS = ("single-run", "optimality", "weak", "strong", "beat")
CSV_COLUMNS = ("step", "t_ms", "nit", "lit_total", "lit_avg", "cond_est", "wall_ms")


@dataclass
class ExperimentConfig:
    scenario: str = "single-run"
    geometry: str = "slab"
    mesh: tuple = (16, 16, 16)
    subs: tuple = (2, 2, 2)
    slab_extent: tuple = (1.92, 1.92, 0.48)
    precond: str = "bddc"  # bddc | fetidp | none
    scaling: str = "rho"
    primal: str = "vef"
    boundary_split: bool = False
    dt: float = 0.05
    t_end: float = 2.0
    threads: int = 1
    krylov_rtol: float = 1e-8
    krylov_atol: float = 1e-10
    krylov_max_it: int = 2000
    newton_rtol: float = 1e-4
    newton_atol: float = 1e-8
    stimulus_amplitude: float = 100.0
    stimulus_duration: float = 1.0
    stimulus_radius: float = 0.1
    out: str | None = None
    vtk_every: int = 0
    # optimality sweep
    hh_list: tuple = (4, 8, 12)
    sweep_primals: tuple = ("v", "ve", "vef")
    sweep_scalings: tuple = ("rho", "deluxe")
    sweep_methods: tuple = ("bddc", "fetidp")
    probe_every: int = 0  # 0: choose from the local size
    # scaling runs
    workers: tuple = (2, 4, 8)
    local_size: int = 8

    def __post_init__(self):
        self.mesh = tuple(int(x) for x in self.mesh)
        self.subs = tuple(int(x) for x in self.subs)
        self.slab_extent = tuple(float(x) for x in self.slab_extent)
        for name in ("hh_list", "workers"):
            setattr(self, name, tuple(int(x) for x in getattr(self, name)))
        for name in ("sweep_primals", "sweep_scalings", "sweep_methods"):
            setattr(self, name, tuple(str(x) for x in getattr(self, name)))
        self.validate()

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigurationError(f"unknown scenario {self.scenario!r}")
        if self.precond not in ("bddc", "fetidp", "none"):
            raise ConfigurationError(f"unknown preconditioner {self.precond!r}")
        if self.scaling not in ("rho", "deluxe"):
            raise ConfigurationError(f"unknown scaling {self.scaling!r}")
        for p in (self.primal,) + self.sweep_primals:
            if p.replace("+", "").lower() not in ("v", "ve", "vef"):
                raise ConfigurationError(f"unknown primal space {p!r}")
        if len(self.mesh) != 3 or len(self.subs) != 3 or min(self.mesh + self.subs) < 1:
            raise ConfigurationError("mesh and subs need three positive integers")
        if self.scenario in ("single-run", "beat", "strong") and self.precond != "none":
            for n, p in zip(self.mesh, self.subs):
                if n % p:
                    raise ConfigurationError(f"mesh {self.mesh} not divisible by subdomain grid {self.subs}")
        if self.dt <= 0 or self.t_end < 0:
            raise ConfigurationError("need dt > 0 and t_end >= 0")
        if self.threads < 1 or self.vtk_every < 0 or self.probe_every < 0:
            raise ConfigurationError("threads >= 1, vtk_every >= 0 and probe_every >= 0 required")
        if min(self.hh_list, default=1) < 1 or min(self.workers, default=2) < 2 or self.local_size < 1:
            raise ConfigurationError("hh_list, workers and local_size must be positive (workers >= 2)")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def krylov(self) -> KrylovConfig:
        return KrylovConfig(rtol=self.krylov_rtol, atol=self.krylov_atol, max_it=self.krylov_max_it)

    def newton(self) -> NewtonConfig:
        return NewtonConfig(rtol=self.newton_rtol, atol=self.newton_atol)

    def dd(self, grid=None, **kw) -> DDConfig:
        args = dict(grid=tuple(grid or self.subs), primal=self.primal, scaling=self.scaling,
                    method=self.precond if self.precond != "none" else "bddc", threads=self.threads,
                    boundary_split=self.boundary_split)
        args.update(kw)
        return DDConfig(**args)


@dataclass
class StepRow:
    step: int
    t_ms: float
    nit: int
    lit_total: int
    lit_avg: float
    cond_est: float
    wall_ms: float


@dataclass
class ResultsTable:
    """Per-step rows plus averages in the usual nit / lit / cond columns."""

    label: str = ""
    rows: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def add(self, row: StepRow):
        self.rows.append(row)

    @property
    def nit(self) -> float:
        return float(np.mean([r.nit for r in self.rows])) if self.rows else float("nan")

    @property
    def lit(self) -> float:
        vals = [r.lit_avg for r in self.rows if r.nit > 0]
        return float(np.mean(vals)) if vals else 0.0

    @property
    def cond(self) -> float:
        vals = [r.cond_est for r in self.rows if np.isfinite(r.cond_est)]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def wall_ms(self) -> float:
        return float(np.sum([r.wall_ms for r in self.rows]))

    def averages(self) -> dict:
        return dict(nit=self.nit, lit=self.lit, cond=self.cond, wall_ms=self.wall_ms, steps=len(self.rows))

    def lit_series(self) -> np.ndarray:
        return np.array([r.lit_avg for r in self.rows])

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(CSV_COLUMNS)
            for r in self.rows:
                w.writerow([r.step, repr(r.t_ms), r.nit, r.lit_total, repr(r.lit_avg), repr(r.cond_est),
                            repr(r.wall_ms)])

    @classmethod
    def read_csv(cls, path, label: str = "") -> "ResultsTable":
        tab = cls(label)
        with open(path, newline="") as fh:
            rd = csv.reader(fh)
            header = next(rd)
            if tuple(header) != CSV_COLUMNS:
                raise ValueError(f"unexpected CSV header {header}")
            for s, t, n, lt, la, c, wm in rd:
                tab.add(StepRow(int(s), float(t), int(n), int(lt), float(la), float(c), float(wm)))
        return tab


@dataclass
class SweepRow:
    hh: int
    method: str
    scaling: str
    primal: str
    nit: float
    lit: float
    cond: float
    probes: int
    setup_s: float


@dataclass
class SweepTable:
    """Summary rows of a sweep, with the probe tables they were averaged from."""

    rows: list = field(default_factory=list)
    tables: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    def get(self, hh, method, scaling, primal) -> SweepRow:
        for r in self.rows:
            if (r.hh, r.method, r.scaling, r.primal) == (hh, method, scaling, primal):
                return r
        raise KeyError((hh, method, scaling, primal))

    def write_csv(self, path) -> None:
        names = [f.name for f in dataclasses.fields(SweepRow)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names)
            for r in self.rows:
                w.writerow([repr(v) if isinstance(v, float) else v for v in dataclasses.astuple(r)])

    def format(self) -> str:
        lines = [f"{'H/h':>4} {'method':>7} {'scaling':>7} {'primal':>6} {'nit':>5} {'lit':>6} {'cond':>7}"]
        for r in self.rows:
            lines.append(f"{r.hh:>4} {r.method:>7} {r.scaling:>7} {r.primal:>6} {r.nit:5.2f} {r.lit:6.1f} "
                         f"{r.cond:7.2f}")
        return "\n".join(lines)


# --- problem construction ----------------------------------------------------

def make_problem(cfg: ExperimentConfig, mesh_shape=None, decomp_grid=None):
    """Mesh, problem and decomposition (None for a single-domain run)."""
    nx, ny, nz = mesh_shape or cfg.mesh
    mcfg = MeshConfig(geometry=cfg.geometry, nx=nx, ny=ny, nz=nz, slab_extent=cfg.slab_extent)
    mcfg.validate()
    mesh = build_mesh(mcfg)
    region = "corner-sphere" if cfg.geometry == "slab" else "endocardial"
    stim = Stimulus(amplitude=cfg.stimulus_amplitude, duration=cfg.stimulus_duration, region=region,
                    radius=cfg.stimulus_radius)
    params = SystemParams(dt=cfg.dt, membrane=MembraneParams(), stimulus=stim, t_end=cfg.t_end)
    grid = decomp_grid if decomp_grid is not None else cfg.subs
    decomp = partition_box(mesh, grid) if int(np.prod(grid)) > 1 else None
    cond = ConductivityTensors()
    em = ElementMatrices(mesh, cond, decomp.element_subdomain if decomp is not None else None)
    problem = BidomainProblem(mesh, cond, params, element_matrices=em)
    return problem, decomp


def make_solver(cfg: ExperimentConfig, problem, decomp, grid=None):
    if cfg.precond == "none" or decomp is None:
        return MonolithicCG(problem, cfg.krylov(), jacobi=False)
    return DualPrimalSolver(problem, cfg.dd(grid), cfg.krylov(), decomp)


# --- probes --------------------------------------------------------------------

@dataclass(frozen=True)
class Variant:
    method: str  # bddc | fetidp | none
    scaling: str = "rho"
    primal: str = "vef"

    @property
    def key(self) -> tuple:
        return (self.method, self.scaling, self.primal)


class ProbedSolver:
    """Linear solver wrapper: solves with ``inner`` and, at probe steps, with every variant too."""

    def __init__(self, problem, inner, variants, decomp=None, krylov: KrylovConfig | None = None,
                 boundary_split: bool = False, threads: int = 1, grid=None):
        self.problem = problem
        self.inner = inner
        self.variants = list(variants)
        self.decomp = decomp
        self.krylov = krylov or KrylovConfig()
        self.boundary_split = boundary_split
        self.threads = threads
        self.grid = grid
        self.probing = False
        # variant key -> list of (step, newton_it, iterations, cond)
        self.results: dict = {v.key: [] for v in self.variants}
        self.setup_s: dict = {}
        self.step = 0
        self._nit = 0
        self._shared = None

    def begin_step(self, step: int, probe: bool):
        self.step = step
        self.probing = probe
        self._nit = 0

    def _shared_factors(self):
        if self._shared is None:
            self._shared = SharedFactors(self.problem, self.decomp, self.boundary_split)
        return self._shared

    def _probe(self, coeff, rhs):
        # unit right-hand side: the absolute tolerance must not cut short the
        # small late-Newton systems, whose iteration counts feed the averages
        rhs = project_out_constant(rhs)
        nrm = float(np.linalg.norm(rhs))
        if nrm == 0.0:
            return
        rhs = rhs / nrm
        plain = [v for v in self.variants if v.method == "none"]
        for v in plain:
            A = self.problem.coupled.matrix(coeff)
            _, rep = pcg(lambda x: A @ x, rhs, None, self._lenient(), project=project_out_constant)
            self.results[v.key].append((self.step, self._nit, rep.iterations, rep.cond_est))
        primals = []
        for v in self.variants:
            if v.method != "none" and v.primal not in primals:
                primals.append(v.primal)
        density = coeff / self.problem.mass
        for primal in primals:
            dd = DDConfig(grid=self.decomp.grid, primal=primal, threads=self.threads,
                          boundary_split=self.boundary_split)
            solver = DualPrimalSolver(self.problem, dd, self._lenient(), shared=self._shared_factors())
            solver.setup(density)
            self.setup_s.setdefault(primal, []).append(solver.last_setup_s)
            fg = solver.schur.condense_rhs(rhs)
            for v in self.variants:
                if v.method == "none" or v.primal != primal:
                    continue
                _, rep = solver.solve_interface(fg, v.method, v.scaling)
                self.results[v.key].append((self.step, self._nit, rep.iterations, rep.cond_est))
            solver.release()
            solver.close()

    def _lenient(self) -> KrylovConfig:
        return dataclasses.replace(self.krylov, raise_on_failure=False)

    def solve(self, coeff, rhs, state=None) -> LinearResult:
        self._nit += 1
        if self.probing and self.variants:
            self._probe(coeff, rhs)
        return self.inner.solve(coeff, rhs, state)

    def release(self):
        if self._shared is not None:
            self._shared.release()
        self._shared = None


# --- trajectory ------------------------------------------------------------------

def run_trajectory(problem, linear_solver, n_steps: int, newton: NewtonConfig | None = None, on_step=None,
                   before_step=None, label: str = ""):
    """Advance ``n_steps`` steps from rest.  Returns (ResultsTable, final state, step records)."""
    state = BidomainState.resting(problem.n_nodes)
    table = ResultsTable(label)
    records = []
    if on_step is not None:
        on_step(0, state)
    for k in range(1, n_steps + 1):
        if before_step is not None:
            before_step(k)
        state, rec = advance_time_step(problem, state, linear_solver, newton, step=k)
        records.append(rec)
        table.add(StepRow(k, rec.t, rec.newton_its, rec.lit_total, rec.lit_avg, rec.cond_avg, rec.wall_ms))
        if on_step is not None:
            on_step(k, state)
    return table, state, records


def default_probe_every(hh: int, n_steps: int) -> int:
    """Probe cadence: every step for small local problems, a handful of steps for large ones."""
    if hh <= 4:
        return 1
    if hh <= 8:
        return max(1, n_steps // 8)
    return max(1, n_steps // 2)


def probe_schedule(n_steps: int, every: int) -> set:
    """Steps 1, 1+every, ... plus the last step."""
    steps = set(range(1, n_steps + 1, every))
    if n_steps:
        steps.add(n_steps)
    return steps


def run_single(cfg: ExperimentConfig, snapshots=None):
    problem, decomp = make_problem(cfg)
    solver = make_solver(cfg, problem, decomp)
    on_step = None
    if snapshots is not None:
        def on_step(k, state):
            if cfg.vtk_every and k % cfg.vtk_every == 0:
                snapshots.append((k, state.copy()))
    try:
        table, state, _ = run_trajectory(problem, solver, cfg.n_steps, cfg.newton(), on_step, label="single-run")
    finally:
        if hasattr(solver, "close"):
            solver.close()
    table.meta.update(n_dofs=problem.n_dofs, subdomains=decomp.num_subdomains if decomp else 1)
    return table, problem, state


def optimality_mesh(hh: int, grid) -> tuple:
    return tuple(int(g) * hh for g in grid)


def run_optimality(cfg: ExperimentConfig, trajectory: str = "monolithic") -> SweepTable:
    """Fixed subdomain grid, growing local size H/h.

    The trajectory is advanced with ``trajectory`` ("monolithic": Jacobi-CG,
    or "dd": the configured dual-primal solver); every (method, scaling,
    primal) variant is probed on the Newton systems of the sampled steps.
    """
    variants = [Variant(m, s, p) for p in cfg.sweep_primals for s in cfg.sweep_scalings for m in cfg.sweep_methods]
    sweep = SweepTable(meta=dict(config=cfg.to_dict(), trajectory=trajectory))
    for hh in cfg.hh_list:
        t0 = time.perf_counter()
        problem, decomp = make_problem(cfg, optimality_mesh(hh, cfg.subs), cfg.subs)
        if trajectory == "dd":
            inner = DualPrimalSolver(problem, cfg.dd(), cfg.krylov(), decomp)
        else:
            inner = MonolithicCG(problem, dataclasses.replace(cfg.krylov(), max_it=20000), jacobi=True)
        probe = ProbedSolver(problem, inner, variants, decomp, cfg.krylov(), cfg.boundary_split, cfg.threads)
        every = cfg.probe_every or default_probe_every(hh, cfg.n_steps)
        sched = probe_schedule(cfg.n_steps, every)
        traj, _, _ = run_trajectory(problem, probe, cfg.n_steps, cfg.newton(),
                                    before_step=lambda k: probe.begin_step(k, k in sched), label=f"hh{hh}")
        probe.release()
        if hasattr(inner, "close"):
            inner.close()
        nit_of = {r.step: r.nit for r in traj.rows}
        t_of = {r.step: r.t_ms for r in traj.rows}
        for v in variants:
            tab = ResultsTable(f"hh{hh}-{v.method}-{v.scaling}-{v.primal}")
            by_step: dict = {}
            for step, _, its, cond in probe.results[v.key]:
                by_step.setdefault(step, []).append((its, cond))
            for step in sorted(by_step):
                its = [a for a, _ in by_step[step]]
                conds = [c for _, c in by_step[step] if np.isfinite(c)]
                tab.add(StepRow(step, t_of[step], nit_of[step], int(sum(its)), float(np.mean(its)),
                                float(np.mean(conds)) if conds else float("nan"), 0.0))
            sweep.tables[(hh,) + v.key] = tab
            setup = probe.setup_s.get(v.primal, [])
            sweep.rows.append(SweepRow(hh, v.method, v.scaling, v.primal, traj.nit, tab.lit, tab.cond,
                                       len(probe.results[v.key]), float(np.mean(setup)) if setup else 0.0))
        sweep.tables[(hh, "trajectory")] = traj
        log.info("H/h=%d done in %.1f s (probe every %d steps)", hh, time.perf_counter() - t0, every)
    return sweep


def worker_grid(n: int, base=(1, 1, 1)) -> tuple:
    """Subdomain grid with n subdomains, doubling x, y, z in turn (n a power of two)."""
    if n < 1 or n & (n - 1):
        raise ConfigurationError(f"worker count {n} must be a power of two")
    g = list(base)
    axis = 0
    while int(np.prod(g)) < n:
        g[axis] *= 2
        axis = (axis + 1) % 3
    return tuple(g)


def run_scaling(cfg: ExperimentConfig, mode: str) -> ResultsTable:
    """Weak (fixed local size) or strong (fixed global mesh) scaling over ``cfg.workers``.

    Rows are indexed by subdomain count; ``meta['speedup']`` maps count -> T_ref / T_N
    with the smallest count as reference.
    """
    if mode not in ("weak", "strong"):
        raise ConfigurationError(f"unknown scaling mode {mode!r}")
    if cfg.precond == "none":
        raise ConfigurationError("scaling runs need a dual-primal preconditioner")
    table = ResultsTable(f"{mode}-scaling")
    times = {}
    for n in cfg.workers:
        grid = worker_grid(n)
        if mode == "weak":
            shape = tuple(cfg.local_size * g for g in grid)
        else:
            shape = cfg.mesh
            for s, g in zip(shape, grid):
                if s % g:
                    raise ConfigurationError(f"mesh {shape} not divisible by subdomain grid {grid}")
        problem, decomp = make_problem(cfg, shape, grid)
        run_cfg = dataclasses.replace(cfg, threads=n, subs=grid)
        solver = DualPrimalSolver(problem, run_cfg.dd(grid), cfg.krylov(), decomp)
        t0 = time.perf_counter()
        try:
            tab, _, _ = run_trajectory(problem, solver, cfg.n_steps, cfg.newton())
        finally:
            solver.close()
        wall = time.perf_counter() - t0
        times[n] = wall
        a = tab.averages()
        table.add(StepRow(n, float(cfg.n_steps * cfg.dt), 0, 0, a["lit"], a["cond"], 1e3 * wall))
        table.rows[-1].nit = int(round(a["nit"]))
        table.meta.setdefault("nit", {})[n] = a["nit"]
        table.meta.setdefault("mesh", {})[n] = list(shape)
        table.meta.setdefault("grid", {})[n] = list(grid)
    ref = min(times)
    table.meta["speedup"] = {n: times[ref] / t for n, t in times.items()}
    return table


def run_beat(cfg: ExperimentConfig, baseline_every: int = 0):
    """Whole activation/recovery run with the configured solver.

    With ``baseline_every`` > 0 the Newton systems of every k-th step are also
    solved by unpreconditioned CG; returns (table, info dict).
    """
    problem, decomp = make_problem(cfg)
    solver = make_solver(cfg, problem, decomp)
    variants = [Variant("none")] if baseline_every else []
    probe = ProbedSolver(problem, solver, variants, decomp, cfg.krylov())
    sched = probe_schedule(cfg.n_steps, baseline_every) if baseline_every else set()
    try:
        table, state, records = run_trajectory(problem, probe, cfg.n_steps, cfg.newton(),
                                               before_step=lambda k: probe.begin_step(k, k in sched), label="beat")
    finally:
        if hasattr(solver, "close"):
            solver.close()
    lits = np.array([r.lit_avg for r in table.rows if r.nit > 0])
    info = dict(records=records, bounded=bool(lits.size == 0 or lits.max() <= 2 * np.median(lits)),
                lit_max=float(lits.max()) if lits.size else 0.0,
                lit_median=float(np.median(lits)) if lits.size else 0.0,
                v_max=max((r.v_max for r in records), default=0.0))
    if baseline_every:
        base = probe.results[Variant("none").key]
        probed = {(s, k) for s, k, _, _ in base}
        # compare against the preconditioned solves of the same systems
        pre = []
        for r in records:
            for k, its in enumerate(r.linear_its, start=1):
                if (r.step, k) in probed:
                    pre.append(its)
        info["baseline_lit"] = float(np.mean([b[2] for b in base])) if base else float("nan")
        info["precond_lit"] = float(np.mean(pre)) if pre else float("nan")
    return table, info


# --- outputs -------------------------------------------------------------------

_VTK_HEX = np.array([0, 1, 3, 2, 4, 5, 7, 6])


def write_vtk(path, mesh, state: BidomainState) -> None:
    """Legacy ASCII unstructured-grid file with point fields v, u_i, u_e, w."""
    n = mesh.num_nodes
    conn = mesh.element_nodes[:, _VTK_HEX]
    with open(path, "w") as fh:
        fh.write("# vtk DataFile Version 3.0\nbidomain state t=%r\nASCII\nDATASET UNSTRUCTURED_GRID\n" % state.t)
        fh.write(f"POINTS {n} double\n")
        np.savetxt(fh, mesh.node_coords, fmt="%.9g")
        fh.write(f"CELLS {conn.shape[0]} {9 * conn.shape[0]}\n")
        np.savetxt(fh, np.hstack([np.full((conn.shape[0], 1), 8), conn]), fmt="%d")
        fh.write(f"CELL_TYPES {conn.shape[0]}\n")
        np.savetxt(fh, np.full(conn.shape[0], 12), fmt="%d")
        fh.write(f"POINT_DATA {n}\n")
        for name, arr in (("v", state.v), ("u_i", state.u_i), ("u_e", state.u_e), ("w", state.w)):
            fh.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            np.savetxt(fh, arr, fmt="%.12g")


def git_hash() -> str:
    try:
        out = subprocess.run(["git", "rev-parse", "HEAD"], capture_output=True, text=True, timeout=5,
                             cwd=os.path.dirname(os.path.abspath(__file__)))
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, float) and not math.isfinite(x):
        return None
    return x


def emit_outputs(table, out_dir, cfg: ExperimentConfig, mesh=None, snapshots=(), timing: dict | None = None):
    """Write results.csv, metadata.json and VTK snapshots; returns the written paths."""
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    csv_path = os.path.join(out_dir, "results.csv")
    table.write_csv(csv_path)
    paths["csv"] = csv_path
    if isinstance(table, SweepTable):
        for key, tab in table.tables.items():
            name = "_".join(str(k) for k in key)
            tab.write_csv(os.path.join(out_dir, f"steps_{name}.csv"))
    snaps = []
    for k, state in snapshots:
        p = os.path.join(out_dir, f"snapshot_{k:05d}.vtk")
        write_vtk(p, mesh, state)
        snaps.append(p)
    paths["vtk"] = snaps
    meta = dict(config=cfg.to_dict(), git=git_hash(), timing=timing or {},
                averages=table.averages() if isinstance(table, ResultsTable) else None,
                table_meta=table.meta)
    meta_path = os.path.join(out_dir, "metadata.json")
    with open(meta_path, "w") as fh:
        json.dump(_jsonable(meta), fh, indent=2)
    paths["metadata"] = meta_path
    return paths


def config_from_metadata(path) -> ExperimentConfig:
    with open(path) as fh:
        return ExperimentConfig(**json.load(fh)["config"])


def run(cfg: ExperimentConfig):
    """Dispatch on the scenario; writes outputs when ``cfg.out`` is set."""
    t0 = time.perf_counter()
    snapshots = [] if cfg.vtk_every else None
    mesh = None
    if cfg.scenario == "single-run":
        table, problem, _ = run_single(cfg, snapshots)
        mesh = problem.mesh
    elif cfg.scenario == "optimality":
        table = run_optimality(cfg)
    elif cfg.scenario in ("weak", "strong"):
        table = run_scaling(cfg, cfg.scenario)
    else:
        table, info = run_beat(cfg)
        table.meta.update({k: v for k, v in info.items() if k != "records"})
    wall = time.perf_counter() - t0
    if cfg.out:
        emit_outputs(table, cfg.out, cfg, mesh, snapshots or (), dict(wall_s=wall))
    return table


__all__ = ["ExperimentConfig", "ResultsTable", "StepRow", "SweepRow", "SweepTable", "Variant", "ProbedSolver",
           "make_problem", "make_solver", "run_trajectory", "run_single", "run_optimality", "run_scaling",
           "run_beat", "emit_outputs", "write_vtk", "run", "probe_schedule", "worker_grid", "SolverFailure",
           "KrylovError"]
