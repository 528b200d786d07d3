"""BDDC and FETI-DP on the partially assembled interface space.

Both methods share one ``PartialAssembly``: per-subdomain constrained solvers
(point constraints eliminated, averages enforced through multipliers),
the coarse basis restricted to dual coordinates, and the coarse matrix.
The coarse matrix inherits the joint-constant kernel; it is made definite by
pinning primal coordinate 0.
"""
from __future__ import annotations

import ctypes
import gc
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .krylov import KrylovConfig, pcg
from .mesh import ConfigurationError
from .schur import GlobalSchur, LocalSchur, SubdomainMatrix
from .scaling import DeluxeScaling, InterfaceScaling, RhoScaling, build_class_minors
from .stepper import BidomainProblem, LinearResult, project_out_constant
from .topology import InterfaceMap, partition_box

log = logging.getLogger(__name__)


def trim_heap() -> None:
    """Hand freed allocator arenas back to the OS (glibc only; a no-op elsewhere)."""
    gc.collect()
    try:
        ctypes.CDLL("libc.so.6").malloc_trim(0)
    except (OSError, AttributeError):
        pass


class LocalConstrainedSolver:
    """Minimizes the local energy subject to prescribed primal values.

    Point constraints are imposed by elimination, which also removes the local
    joint-constant kernel, so the remaining block is factored as SPD; averages
    go through multipliers and a small dense Schur complement.  Without any
    point constraint the full saddle-point matrix is LU-factored instead.
    """

    def __init__(self, K: sp.csr_matrix, n_interior: int, C_gamma: sp.csr_matrix):
        n = K.shape[0]
        self.n = n
        self.nI = n_interior
        npi = C_gamma.shape[0]
        self.n_primal = npi
        C = sp.hstack([sp.csr_matrix((npi, n_interior)), C_gamma]).tocsr()
        self.C = C
        nnz = np.diff(C.indptr)
        self.point_rows = np.flatnonzero(nnz == 1)
        self.avg_rows = np.flatnonzero(nnz > 1)
        self.point_dofs = C.indices[C.indptr[self.point_rows]]
        if self.point_rows.size:
            keep = np.ones(n, dtype=bool)
            keep[self.point_dofs] = False
            self.keep = np.flatnonzero(keep)
            Kc = K.tocsc()
            K_rr = K[self.keep][:, self.keep]
            self.K_rp = Kc[:, self.point_dofs][self.keep].toarray()
            self.lu = spla.splu(sp.csc_matrix(K_rr), permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0,
                                options=dict(SymmetricMode=True))
            self.C_avg = C[self.avg_rows][:, self.keep].tocsr()
            if self.avg_rows.size:
                self.X = self.lu.solve(self.C_avg.T.toarray())
                Sc = self.C_avg @ self.X
                self.Sc = sla.cho_factor(0.5 * (Sc + Sc.T))
            self.saddle = False
        else:
            A = sp.bmat([[K, C.T], [C, None]], format="csc")
            self.lu = spla.splu(A, permc_spec="MMD_AT_PLUS_A")
            self.saddle = True

    def solve(self, g: np.ndarray, c: np.ndarray) -> np.ndarray:
        """u minimizing 1/2 u'Ku - g'u subject to C u = c (columns allowed)."""
        if self.saddle:
            b = np.concatenate([g, c], axis=0)
            return self.lu.solve(b)[: self.n]
        u = np.zeros_like(g)
        up = c[self.point_rows]
        u[self.point_dofs] = up
        rhs = g[self.keep] - self.K_rp @ up
        y = self.lu.solve(rhs)
        if self.avg_rows.size:
            mu = sla.cho_solve(self.Sc, self.C_avg @ y - c[self.avg_rows])
            y = y - self.X @ mu
        u[self.keep] = y
        return u

    def solve_gamma(self, g_gamma: np.ndarray) -> np.ndarray:
        """Interface part of u for zero constraint values and load only on the interface."""
        g = np.zeros((self.n,) + g_gamma.shape[1:])
        g[self.nI:] = g_gamma
        c = np.zeros((self.n_primal,) + g_gamma.shape[1:])
        return self.solve(g, c)[self.nI:]

    def coarse_basis(self) -> np.ndarray:
        """Full local columns u with C u = e_p and minimal energy."""
        return self.solve(np.zeros((self.n, self.n_primal)), np.eye(self.n_primal))


@dataclass
class SubdomainSetup:
    density: np.ndarray
    K: sp.csr_matrix
    schur: LocalSchur
    solver: LocalConstrainedSolver
    psi_dual: np.ndarray  # (n_dual_j, n_primal_j)
    S_pp: np.ndarray  # (n_primal_j, n_primal_j)
    minors: dict | None = None


class PartialAssembly:
    """Application of the inverse of the partially assembled Schur complement."""

    def __init__(self, imap: InterfaceMap, setups: list[SubdomainSetup]):
        self.imap = imap
        self.setups = setups
        npi = imap.n_primal
        S = np.zeros((npi, npi))
        for li, st in zip(imap.local, setups):
            idx = li.primal_global
            S[np.ix_(idx, idx)] += st.S_pp
        self.S_pp = 0.5 * (S + S.T)
        if npi == 0:
            raise ConfigurationError("empty primal space: every subdomain would float")
        self.coarse_chol = sla.cho_factor(self.S_pp[1:, 1:]) if npi > 1 else None

    def coarse_solve(self, r: np.ndarray) -> np.ndarray:
        x = np.zeros_like(r)
        if self.coarse_chol is not None:
            x[1:] = sla.cho_solve(self.coarse_chol, r[1:])
        return x

    def local_dual_solve(self, j: int, g_dual_j: np.ndarray) -> np.ndarray:
        li = self.imap.local[j]
        gt = np.concatenate([np.zeros(li.n_primal), g_dual_j])
        g = li.basis.cov_to_original(gt)
        u = self.setups[j].solver.solve_gamma(g)
        return li.basis.to_transformed(u)[li.n_primal:]

    def apply_inverse(self, g_primal: np.ndarray, g_dual: np.ndarray):
        """(z_primal, z_dual) = S-tilde^-1 (g_primal, g_dual) for a consistent right-hand side."""
        imap = self.imap
        z_dual = np.zeros(imap.n_dual)
        rhs = g_primal.copy()
        for j, li in enumerate(imap.local):
            sl = li.dual_slice
            z_dual[sl] = self.local_dual_solve(j, g_dual[sl])
            np.add.at(rhs, li.primal_global, self.setups[j].psi_dual.T @ g_dual[sl])
        x = self.coarse_solve(rhs)
        for j, li in enumerate(imap.local):
            z_dual[li.dual_slice] += self.setups[j].psi_dual @ x[li.primal_global]
        return x, z_dual

    def apply_dual_schur(self, x_dual: np.ndarray) -> np.ndarray:
        """Block-diagonal S_DD applied to a W_delta vector."""
        out = np.zeros_like(x_dual)
        for j, li in enumerate(self.imap.local):
            xt = np.concatenate([np.zeros(li.n_primal), x_dual[li.dual_slice]])
            y = self.setups[j].schur.apply(li.basis.to_original(xt))
            out[li.dual_slice] = li.basis.cov_to_transformed(y)[li.n_primal:]
        return out

    def apply_tilde(self, w: np.ndarray) -> np.ndarray:
        """S-tilde applied to a W-tilde vector (for testing)."""
        imap = self.imap
        wp, wd = imap.split_tilde(w)
        op = np.zeros(imap.n_primal)
        od = np.zeros(imap.n_dual)
        for j, li in enumerate(imap.local):
            xt = np.concatenate([wp[li.primal_global], wd[li.dual_slice]])
            y = li.basis.cov_to_transformed(self.setups[j].schur.apply(li.basis.to_original(xt)))
            np.add.at(op, li.primal_global, y[: li.n_primal])
            od[li.dual_slice] = y[li.n_primal:]
        return np.concatenate([op, od])


class JumpOperator:
    """Non-redundant jump B: consecutive sharers of each dual coordinate, entries +1/-1."""

    def __init__(self, imap: InterfaceMap):
        self.imap = imap
        self.blocks = []
        off = 0
        for g in imap.groups:
            G, m, nd = g.wd_idx.shape
            idx = off + np.arange(G * (m - 1) * nd).reshape(G, m - 1, nd)
            off += idx.size
            # (B B^T)^-1 for the path graph on m sharers: inverse of tridiag(-1, 2, -1)
            L = 2 * np.eye(m - 1) - np.eye(m - 1, k=1) - np.eye(m - 1, k=-1)
            self.blocks.append((idx, np.linalg.inv(L)))
        self.n_lambda = off

    def apply(self, wd: np.ndarray) -> np.ndarray:
        lam = np.zeros(self.n_lambda)
        for g, (idx, _) in zip(self.imap.groups, self.blocks):
            u = wd[g.wd_idx]
            lam[idx] = u[:, :-1] - u[:, 1:]
        return lam

    def apply_t(self, lam: np.ndarray) -> np.ndarray:
        out = np.zeros(self.imap.n_dual)
        for g, (idx, _) in zip(self.imap.groups, self.blocks):
            L = lam[idx]
            u = np.zeros(g.wd_idx.shape)
            u[:, :-1] += L
            u[:, 1:] -= L
            out[g.wd_idx] = u
        return out

    def gram_inverse(self, lam: np.ndarray) -> np.ndarray:
        out = np.empty_like(lam)
        for idx, Linv in self.blocks:
            out[idx] = np.einsum("ab,gbk->gak", Linv, lam[idx])
        return out

    def matrix(self) -> sp.csr_matrix:
        n = self.imap.n_dual
        return sp.csr_matrix(np.array([self.apply(e) for e in np.eye(n)]).T) if n else sp.csr_matrix((0, 0))


class ScaledJump:
    """B_D with B_D^T = P_D B^T (B B^T)^-1, so that B_D^T B = P_D."""

    def __init__(self, B: JumpOperator, scaling: InterfaceScaling):
        self.B = B
        self.scaling = scaling

    def apply_t(self, lam):
        return self.scaling.apply_P_D_dual(self.B.apply_t(self.B.gram_inverse(lam)))

    def apply(self, wd):
        return self.B.gram_inverse(self.B.apply(self.scaling.apply_P_D_dual_t(wd)))


@dataclass
class DDConfig:
    grid: tuple = (2, 2, 2)
    primal: str = "vef"
    scaling: str = "rho"
    method: str = "bddc"  # or "fetidp"
    threads: int = 1
    boundary_split: bool = False  # outer boundary refines interface classes

    def __post_init__(self):
        if self.method not in ("bddc", "fetidp"):
            raise ConfigurationError(f"unknown preconditioner {self.method!r}")
        if self.scaling not in ("rho", "deluxe"):
            raise ConfigurationError(f"unknown scaling {self.scaling!r}")
        if self.threads < 1:
            raise ConfigurationError("threads must be >= 1")


class SharedFactors:
    """Interior factorizations shared by every solver on one problem and decomposition."""

    def __init__(self, problem: BidomainProblem, decomp, boundary_split: bool = False):
        self.problem = problem
        self.decomp = decomp
        # the interior/interface split does not depend on the primal space
        self.imap = InterfaceMap(decomp, primal="v", boundary_split=boundary_split)
        self.submats = [SubdomainMatrix(problem, decomp, self.imap, j) for j in range(decomp.num_subdomains)]
        self._density: list = [None] * decomp.num_subdomains
        self._schur: list = [None] * decomp.num_subdomains
        self._blocks: list = [None] * decomp.num_subdomains

    def local(self, j: int, density_local: np.ndarray):
        """(K, LocalSchur) for subdomain j, refactored only when the coefficients change."""
        if self._density[j] is None or not np.array_equal(self._density[j], density_local):
            K = self.submats[j].matrix(density_local)
            self._schur[j] = LocalSchur(K, self.submats[j].n_interior, j)
            self._density[j] = density_local.copy()
            self._blocks[j] = None
        return self._schur[j].K, self._schur[j]

    def class_blocks(self, j: int) -> dict:
        """Dense class-by-class diagonal blocks of S_j in local interface dofs, cached per factorization."""
        if self._blocks[j] is None:
            dense = self._schur[j].dense()
            self._blocks[j] = {ci: dense[np.ix_(d, d)] for ci, d in self.imap.local[j].class_dofs.items()}
        return self._blocks[j]

    def release(self):
        self._density = [None] * len(self._density)
        self._schur = [None] * len(self._schur)
        self._blocks = [None] * len(self._blocks)
        trim_heap()


class DualPrimalSolver:
    """Newton linear solver: condense, solve the interface problem by BDDC-PCG or FETI-DP-PCG, recover.

    Several solvers may share one :class:`SharedFactors`; variants differing only
    in scaling or method can reuse one setup through ``solve_interface``.
    """

    def __init__(self, problem: BidomainProblem, cfg: DDConfig | None = None, krylov: KrylovConfig | None = None,
                 decomp=None, shared: SharedFactors | None = None):
        self.problem = problem
        self.cfg = cfg or DDConfig()
        self.krylov = krylov or KrylovConfig()
        if shared is not None:
            decomp = shared.decomp
        self.decomp = decomp or partition_box(problem.mesh, self.cfg.grid)
        if self.decomp.num_subdomains < 2:
            raise ConfigurationError("dual-primal preconditioners need at least two subdomains")
        self.imap = InterfaceMap(self.decomp, primal=self.cfg.primal, boundary_split=self.cfg.boundary_split)
        self._check_floating()
        self.shared = shared or SharedFactors(problem, self.decomp, self.cfg.boundary_split)
        self.submats = self.shared.submats
        self.pool = ThreadPoolExecutor(self.cfg.threads) if self.cfg.threads > 1 else None
        self.setups: list[SubdomainSetup | None] = [None] * self.decomp.num_subdomains
        self.jump = JumpOperator(self.imap)
        self.rho = RhoScaling.from_conductivity(self.imap, problem.cond)
        self._scalings = {}
        self.last_setup_s = 0.0
        self.last_report = None

    def _check_floating(self):
        for li in self.imap.local:
            if li.n_primal == 0:
                raise ConfigurationError(
                    f"primal space {self.cfg.primal!r} leaves a subdomain without constraints; use a richer primal space")

    def _map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    # --- setup -----------------------------------------------------------
    def _setup_subdomain(self, j: int, density_local: np.ndarray) -> SubdomainSetup:
        old = self.setups[j]
        if old is not None and np.array_equal(old.density, density_local):
            return old
        sm = self.submats[j]
        li = self.imap.local[j]
        K, schur = self.shared.local(j, density_local)
        solver = LocalConstrainedSolver(K, sm.n_interior, li.constraints)
        Psi = solver.coarse_basis()
        S_pp = Psi.T @ (K @ Psi)
        psi_gamma = Psi[sm.n_interior:]
        psi_t = np.column_stack([li.basis.to_transformed(psi_gamma[:, k]) for k in range(li.n_primal)])
        return SubdomainSetup(density_local.copy(), K, schur, solver, psi_t[li.n_primal:], 0.5 * (S_pp + S_pp.T))

    def _minors(self, j: int) -> dict:
        return build_class_minors(self.imap, j, blocks=self.shared.class_blocks(j))

    def setup(self, density: np.ndarray):
        """``density`` = chi*C_m + tau*dI/dv per global node."""
        t0 = time.perf_counter()
        self.setups = self._map(lambda j: self._setup_subdomain(j, density[self.submats[j].nodes]),
                                range(self.decomp.num_subdomains))
        self.partial = PartialAssembly(self.imap, self.setups)
        self.schur = GlobalSchur(self.imap, self.submats, [s.schur for s in self.setups], self.pool)
        self._scalings = {}
        self.scaling = self.scaling_for(self.cfg.scaling)
        self.scaled_jump = ScaledJump(self.jump, self.scaling)
        self.last_setup_s = time.perf_counter() - t0

    def scaling_for(self, kind: str) -> InterfaceScaling:
        if kind not in self._scalings:
            if kind == "rho":
                self._scalings[kind] = self.rho
            elif kind == "deluxe":
                for j, st in enumerate(self.setups):
                    if st.minors is None:
                        st.minors = self._minors(j)
                minors = {}
                for st in self.setups:
                    minors.update(st.minors)
                self._scalings[kind] = DeluxeScaling(self.imap, minors)
            else:
                raise ConfigurationError(f"unknown scaling {kind!r}")
        return self._scalings[kind]

    def use_scaling(self, kind: str):
        self.scaling = self.scaling_for(kind)
        self.scaled_jump = ScaledJump(self.jump, self.scaling)

    def release(self):
        """Drop factorizations (the shared interior factors are kept)."""
        self.setups = [None] * self.decomp.num_subdomains
        self.partial = self.schur = None
        self._scalings = {}
        trim_heap()

    # --- BDDC ------------------------------------------------------------
    def bddc_apply(self, r: np.ndarray) -> np.ndarray:
        imap = self.imap
        rt = imap.basis.cov_to_transformed(project_out_constant(r))
        g = self.scaling.scaled_restrict(rt)
        gp, gd = imap.split_tilde(g)
        zp, zd = self.partial.apply_inverse(gp, gd)
        zt = self.scaling.scaled_restrict_t(np.concatenate([zp, zd]))
        return project_out_constant(imap.basis.to_original(zt))

    def solve_interface_bddc(self, f_gamma: np.ndarray):
        return pcg(self.schur.apply, project_out_constant(f_gamma), self.bddc_apply, self.krylov,
                   project=project_out_constant)

    # --- FETI-DP ---------------------------------------------------------
    def fetidp_operator(self, lam: np.ndarray) -> np.ndarray:
        gd = self.jump.apply_t(lam)
        _, zd = self.partial.apply_inverse(np.zeros(self.imap.n_primal), gd)
        return self.jump.apply(zd)

    def fetidp_precond(self, mu: np.ndarray) -> np.ndarray:
        return self.scaled_jump.apply(self.partial.apply_dual_schur(self.scaled_jump.apply_t(mu)))

    def fetidp_rhs(self, f_gamma: np.ndarray):
        imap = self.imap
        ft = self.scaling.scaled_restrict(imap.basis.cov_to_transformed(project_out_constant(f_gamma)))
        fp, fd = imap.split_tilde(ft)
        _, zd = self.partial.apply_inverse(fp, fd)
        return fp, fd, self.jump.apply(zd)

    def solve_interface_fetidp(self, f_gamma: np.ndarray):
        fp, fd, d = self.fetidp_rhs(f_gamma)
        lam, rep = pcg(self.fetidp_operator, d, self.fetidp_precond, self.krylov)
        wp, wd = self.partial.apply_inverse(fp, fd - self.jump.apply_t(lam))
        # w is continuous up to the solver tolerance; any convex combination recovers it
        ut = np.concatenate([wp, self.scaling.average(wd)])
        self.last_lambda = lam
        self.last_w = np.concatenate([wp, wd])
        return project_out_constant(self.imap.basis.to_original(ut)), rep

    def solve_interface(self, f_gamma, method: str | None = None, scaling: str | None = None):
        if scaling is not None and scaling != self.scaling.kind:
            self.use_scaling(scaling)
        method = method or self.cfg.method
        if method == "bddc":
            return self.solve_interface_bddc(f_gamma)
        return self.solve_interface_fetidp(f_gamma)

    # --- Newton interface ------------------------------------------------
    def solve(self, coeff: np.ndarray, rhs: np.ndarray, state=None) -> LinearResult:
        density = coeff / self.problem.mass
        self.setup(density)
        rhs = project_out_constant(rhs)
        fg = self.schur.condense_rhs(rhs)
        ug, rep = self.solve_interface(fg)
        self.last_report = rep
        u = self.schur.recover_interior(ug, rhs)
        return LinearResult(project_out_constant(u), rep.iterations, rep.cond_est, rep.converged)

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()
