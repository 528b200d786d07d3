"""Decoupled Backward Euler time stepping for the bidomain system.

Step 1 advances the gate with the potential frozen; step 2 solves the coupled
elliptic-parabolic system for (u_i, u_e) by Newton's method.  Unknowns are
node-interleaved: ``u[0::2] = u_i``, ``u[1::2] = u_e``.
"""
from __future__ import annotations

import csv
import logging
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np
import scipy.sparse as sp

from .fem import ElementMatrices, scatter_matrix
from .ionic import MembraneParams, RogersMcCulloch
from .krylov import KrylovConfig, KrylovError, pcg
from .mesh import ConductivityTensors, ConfigurationError, HexMesh

log = logging.getLogger(__name__)


class SolverFailure(RuntimeError):
    pass


@dataclass
class Stimulus:
    amplitude: float = 100.0  # mA/cm^3
    duration: float = 1.0  # ms
    region: str = "corner-sphere"  # or "endocardial", "none"
    radius: float = 0.1  # cm, corner sphere
    center: tuple | None = None  # defaults to the minimum-coordinate corner

    def __post_init__(self):
        if self.amplitude < 0 or self.duration < 0:
            raise ConfigurationError("stimulus amplitude and duration must be non-negative")
        if self.region not in ("corner-sphere", "endocardial", "none"):
            raise ConfigurationError(f"unknown stimulus region {self.region!r}")

    def active(self, t_start: float) -> bool:
        return self.region != "none" and self.amplitude > 0 and t_start < self.duration - 1e-12

    def indicator(self, mesh: HexMesh) -> np.ndarray:
        x = mesh.node_coords
        if self.region == "none":
            return np.zeros(mesh.num_nodes)
        if self.region == "corner-sphere":
            c = x.min(axis=0) if self.center is None else np.asarray(self.center, float)
            return (np.linalg.norm(x - c, axis=1) <= self.radius + 1e-12).astype(float)
        return (mesh.depth <= 1e-12).astype(float)


@dataclass
class SystemParams:
    dt: float = 0.05  # ms
    membrane: MembraneParams = field(default_factory=MembraneParams)
    stimulus: Stimulus = field(default_factory=Stimulus)
    t_end: float = 2.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigurationError("time step must be positive")
        if self.t_end < 0:
            raise ConfigurationError("t_end must be non-negative")


@dataclass
class NewtonConfig:
    rtol: float = 1e-4
    atol: float = 1e-8
    stol: float = 1e-8
    max_it: int = 50
    ls_alpha: float = 1e-4
    ls_max_halvings: int = 40
    ls_min_lambda: float = 1e-12


@dataclass
class BidomainState:
    u_i: np.ndarray
    u_e: np.ndarray
    w: np.ndarray
    t: float = 0.0

    @classmethod
    def resting(cls, n_nodes: int) -> "BidomainState":
        return cls(np.zeros(n_nodes), np.zeros(n_nodes), np.zeros(n_nodes), 0.0)

    @property
    def v(self) -> np.ndarray:
        return self.u_i - self.u_e

    def interleaved(self) -> np.ndarray:
        u = np.empty(2 * self.u_i.size)
        u[0::2] = self.u_i
        u[1::2] = self.u_e
        return u

    def copy(self) -> "BidomainState":
        return BidomainState(self.u_i.copy(), self.u_e.copy(), self.w.copy(), self.t)


def interleave(a, b) -> np.ndarray:
    u = np.empty(2 * a.size)
    u[0::2] = a
    u[1::2] = b
    return u


def kernel_vector(n_dofs: int) -> np.ndarray:
    return np.ones(n_dofs) / np.sqrt(n_dofs)


def project_out_constant(x: np.ndarray) -> np.ndarray:
    return x - x.mean()


def csr_positions(A: sp.csr_matrix, rows, cols) -> np.ndarray:
    """Positions in ``A.data`` of entries (rows[k], cols[k]); entries must exist."""
    out = np.empty(len(rows), dtype=np.int64)
    for k, (r, c) in enumerate(zip(rows, cols)):
        lo, hi = A.indptr[r], A.indptr[r + 1]
        out[k] = lo + np.searchsorted(A.indices[lo:hi], c)
    return out


class CoupledMatrix:
    """tau*diag(A_i, A_e) plus nodal 2x2 blocks c*[[1,-1],[-1,1]], interleaved.

    The sparsity pattern is fixed; only the nodal coefficient changes between
    Newton iterates, so updates touch ``data`` in place.
    """

    def __init__(self, A_i: sp.csr_matrix, A_e: sp.csr_matrix, tau: float):
        n = A_i.shape[0]
        Ai, Ae = A_i.tocoo(), A_e.tocoo()
        nodes = np.arange(n)
        rows = np.concatenate([2 * Ai.row, 2 * Ae.row + 1, 2 * nodes, 2 * nodes, 2 * nodes + 1, 2 * nodes + 1])
        cols = np.concatenate([2 * Ai.col, 2 * Ae.col + 1, 2 * nodes, 2 * nodes + 1, 2 * nodes, 2 * nodes + 1])
        vals = np.concatenate([tau * Ai.data, tau * Ae.data, np.zeros(4 * n)])
        M = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n)).tocsr()
        M.sum_duplicates()
        M.sort_indices()
        self.base = M
        self.base_data = M.data.copy()
        n_rows = M.indptr[1:] - M.indptr[:-1]
        self._row_of = np.repeat(np.arange(2 * n), n_rows)
        pos = np.empty((n, 4), dtype=np.int64)
        for k, (dr, dc) in enumerate([(0, 0), (0, 1), (1, 0), (1, 1)]):
            pos[:, k] = _find_entries(M, 2 * nodes + dr, 2 * nodes + dc)
        self.pos = pos
        self.n_nodes = n

    def matrix(self, coeff: np.ndarray) -> sp.csr_matrix:
        data = self.base_data.copy()
        data[self.pos[:, 0]] += coeff
        data[self.pos[:, 1]] -= coeff
        data[self.pos[:, 2]] -= coeff
        data[self.pos[:, 3]] += coeff
        A = self.base.copy()
        A.data = data
        return A


def _find_entries(A: sp.csr_matrix, rows, cols) -> np.ndarray:
    # vectorised lookup in a canonical CSR: encode (row, col) as one key
    n = A.shape[1]
    keys = np.repeat(np.arange(A.shape[0]), np.diff(A.indptr)) * n + A.indices
    q = rows * n + cols
    pos = np.searchsorted(keys, q)
    if np.any(pos >= keys.size) or np.any(keys[np.minimum(pos, keys.size - 1)] != q):
        raise ValueError("entry missing from sparsity pattern")
    return pos


class LinearSolver(Protocol):
    def solve(self, coeff: np.ndarray, rhs: np.ndarray, state: dict | None = None): ...


@dataclass
class LinearResult:
    x: np.ndarray
    iterations: int
    cond_est: float
    converged: bool = True


class BidomainProblem:
    """Residual and Jacobian of the step-2 nonlinear system for a fixed mesh and step."""

    def __init__(self, mesh: HexMesh, cond: ConductivityTensors | None = None, params: SystemParams | None = None,
                 ionic=None, element_matrices: ElementMatrices | None = None, element_subdomain=None):
        self.mesh = mesh
        self.cond = cond or ConductivityTensors()
        self.params = params or SystemParams()
        self.ionic = ionic or RogersMcCulloch()
        self.em = element_matrices or ElementMatrices(mesh, self.cond, element_subdomain)
        loc = mesh.element_nodes
        n = mesh.num_nodes
        self.A_i = scatter_matrix(self.em.stiff["intra"], loc, n)
        self.A_e = scatter_matrix(self.em.stiff["extra"], loc, n)
        self.mass = np.bincount(loc.ravel(), weights=self.em.mass.ravel(), minlength=n)
        self.tau = self.params.dt
        self.coupled = CoupledMatrix(self.A_i, self.A_e, self.tau)
        ind = self.params.stimulus.indicator(mesh)
        # compatible load: zero mass-weighted mean so the kernel sees no net current
        load = self.params.stimulus.amplitude * ind
        if load.any():
            load = load - (self.mass @ load) / self.mass.sum()
        self.stim_load = load

    @property
    def n_nodes(self) -> int:
        return self.mesh.num_nodes

    @property
    def n_dofs(self) -> int:
        return 2 * self.mesh.num_nodes

    def applied_current(self, t_start: float) -> np.ndarray:
        if self.params.stimulus.active(t_start):
            return self.stim_load
        return np.zeros(self.n_nodes)

    def residual(self, u: np.ndarray, w: np.ndarray, v_prev: np.ndarray, i_app: np.ndarray) -> np.ndarray:
        """F(u) - G for interleaved u."""
        if u.size != self.n_dofs or w.size != self.n_nodes or v_prev.size != self.n_nodes:
            raise ValueError("dimension mismatch in residual")
        ui, ue = u[0::2], u[1::2]
        v = ui - ue
        cm = self.params.membrane.chi_cm
        tau = self.tau
        mem = self.mass * (cm * (v - v_prev) + tau * self.ionic.i_ion(v, w))
        r = np.empty_like(u)
        r[0::2] = tau * (self.A_i @ ui) + mem
        r[1::2] = tau * (self.A_e @ ue) - mem + tau * self.mass * i_app
        return r

    def nodal_coefficient(self, u: np.ndarray, w: np.ndarray, reaction: bool = True) -> np.ndarray:
        v = u[0::2] - u[1::2]
        d = self.params.membrane.chi_cm
        if reaction:
            d = d + self.tau * self.ionic.di_ion_dv(v, w)
        return self.mass * d

    def jacobian(self, u, w, reaction: bool = True) -> sp.csr_matrix:
        return self.coupled.matrix(self.nodal_coefficient(u, w, reaction))

    def jacobian_apply(self, u, w, x, reaction: bool = True) -> np.ndarray:
        return coupled_apply(self.A_i, self.A_e, self.tau, self.nodal_coefficient(u, w, reaction), x)

    def rhs_load(self, u_prev, i_app) -> np.ndarray:
        """G as a vector (for inspection; the residual already includes it)."""
        g = np.zeros(self.n_dofs)
        cm = self.params.membrane.chi_cm
        mv = self.mass * cm * (u_prev[0::2] - u_prev[1::2])
        g[0::2] = mv
        g[1::2] = -mv - self.tau * self.mass * i_app
        return g


def coupled_apply(A_i, A_e, tau, coeff, x):
    xi, xe = x[0::2], x[1::2]
    dv = coeff * (xi - xe)
    y = np.empty_like(x)
    y[0::2] = tau * (A_i @ xi) + dv
    y[1::2] = tau * (A_e @ xe) - dv
    return y


class MonolithicCG:
    """Plain or Jacobi-preconditioned CG on the full Jacobian (baseline and 1x1x1 fallback)."""

    def __init__(self, problem: BidomainProblem, krylov: KrylovConfig | None = None, jacobi: bool = False):
        self.problem = problem
        self.krylov = krylov or KrylovConfig()
        self.jacobi = jacobi

    def solve(self, coeff, rhs, state=None):
        p = self.problem
        A = p.coupled.matrix(coeff)
        M = None
        if self.jacobi:
            dinv = 1.0 / A.diagonal()
            M = lambda r: dinv * r  # noqa: E731
        x, rep = pcg(lambda v: A @ v, project_out_constant(rhs), M, self.krylov, project=project_out_constant)
        return LinearResult(x, rep.iterations, rep.cond_est, rep.converged)


@dataclass
class NewtonStats:
    iterations: int
    linear_iterations: list
    cond_estimates: list
    residual_norms: list
    reason: str


def newton_solve(problem: BidomainProblem, u0: np.ndarray, w: np.ndarray, v_prev: np.ndarray,
                 i_app: np.ndarray, linear_solver, cfg: NewtonConfig | None = None):
    """Newton with cubic backtracking; returns (u, NewtonStats)."""
    cfg = cfg or NewtonConfig()
    u = u0.copy()
    F = project_out_constant(problem.residual(u, w, v_prev, i_app))
    fnorm = float(np.linalg.norm(F))
    f0 = fnorm
    norms = [fnorm]
    lits, conds = [], []
    if not np.isfinite(fnorm):
        raise SolverFailure("non-finite initial residual")
    if fnorm < cfg.atol:
        return u, NewtonStats(0, lits, conds, norms, "atol")
    tol = max(cfg.atol, cfg.rtol * f0)
    for k in range(1, cfg.max_it + 1):
        coeff = problem.nodal_coefficient(u, w)
        try:
            res = linear_solver.solve(coeff, -F)
        except KrylovError as exc:
            raise SolverFailure(f"linear solve failed in Newton iteration {k}: {exc}") from exc
        s = project_out_constant(res.x)
        lits.append(res.iterations)
        conds.append(res.cond_est)
        Js = coupled_apply(problem.A_i, problem.A_e, problem.tau, coeff, s)
        u, F, fnorm, lam = _cubic_backtrack(problem, u, s, F, fnorm, Js, w, v_prev, i_app, cfg)
        norms.append(fnorm)
        if fnorm < tol:
            return u, NewtonStats(k, lits, conds, norms, "atol" if fnorm < cfg.atol else "rtol")
        if lam * np.linalg.norm(s) < cfg.stol * np.linalg.norm(u):
            return u, NewtonStats(k, lits, conds, norms, "stol")
    raise SolverFailure(f"Newton did not converge in {cfg.max_it} iterations (|F| = {fnorm:.3e})")


def _cubic_backtrack(problem, u, s, F, fnorm, Js, w, v_prev, i_app, cfg):
    f0 = 0.5 * fnorm ** 2
    slope = float(F @ Js)
    if slope >= 0:
        # inexact direction; fall back to the exact-Newton slope
        slope = -fnorm ** 2
    lam = 1.0
    lam_prev, f_prev = None, None
    for _ in range(cfg.ls_max_halvings + 1):
        u_new = u + lam * s
        F_new = project_out_constant(problem.residual(u_new, w, v_prev, i_app))
        fn = float(np.linalg.norm(F_new))
        f_new = 0.5 * fn ** 2
        if np.isfinite(fn) and f_new <= f0 + cfg.ls_alpha * lam * slope:
            return u_new, F_new, fn, lam
        if not np.isfinite(fn):
            lam_next = 0.1 * lam
        elif lam_prev is None:
            lam_next = -slope / (2.0 * (f_new - f0 - slope))
        else:
            t1 = f_new - f0 - lam * slope
            t2 = f_prev - f0 - lam_prev * slope
            a = (t1 / lam ** 2 - t2 / lam_prev ** 2) / (lam - lam_prev)
            b = (-lam_prev * t1 / lam ** 2 + lam * t2 / lam_prev ** 2) / (lam - lam_prev)
            if a == 0:
                lam_next = -slope / (2.0 * b)
            else:
                disc = b * b - 3.0 * a * slope
                lam_next = (-b + np.sqrt(max(disc, 0.0))) / (3.0 * a)
        lam_prev, f_prev = lam, f_new
        lam = float(np.clip(lam_next, 0.1 * lam, 0.5 * lam))
        if lam < cfg.ls_min_lambda:
            break
    raise SolverFailure("line search failed to find sufficient decrease")


@dataclass
class StepRecord:
    step: int
    t: float
    newton_its: int
    linear_its: list
    cond_estimates: list
    v_min: float
    v_max: float
    wall_ms: float

    @property
    def lit_total(self) -> int:
        return int(sum(self.linear_its))

    @property
    def lit_avg(self) -> float:
        return self.lit_total / self.newton_its if self.newton_its else 0.0

    @property
    def cond_avg(self) -> float:
        c = [x for x in self.cond_estimates if np.isfinite(x)]
        return float(np.mean(c)) if c else float("nan")


def advance_time_step(problem: BidomainProblem, state: BidomainState, linear_solver,
                      newton: NewtonConfig | None = None, step: int = 0):
    """One decoupled Backward Euler step; returns (new state, StepRecord)."""
    t0 = time.perf_counter()
    tau = problem.tau
    v_prev = state.v
    w_new = problem.ionic.gate_update(v_prev, state.w, tau)
    i_app = problem.applied_current(state.t)
    u, stats = newton_solve(problem, state.interleaved(), w_new, v_prev, i_app, linear_solver, newton)
    ui, ue = u[0::2].copy(), u[1::2].copy()
    shift = ue.mean()
    ui -= shift
    ue -= shift
    new = BidomainState(ui, ue, w_new, state.t + tau)
    v = new.v
    rec = StepRecord(step, new.t, stats.iterations, stats.linear_iterations, stats.cond_estimates,
                     float(v.min()), float(v.max()), 1e3 * (time.perf_counter() - t0))
    log.debug("step %d t=%.3f nit=%d lit=%s", step, new.t, rec.newton_its, rec.linear_its)
    return new, rec


def write_time_series(records, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t_ms", "v_min", "v_max", "nit", "lit", "cond_est"])
        for r in records:
            wr.writerow([repr(r.t), repr(r.v_min), repr(r.v_max), r.newton_its, r.lit_total, repr(r.cond_avg)])
