"""Static condensation onto the subdomain interface.

Each subdomain's matrix is ordered ``[interior dofs; interface dofs]`` with
node-interleaved fields inside each block, so the interior/interface blocks are
contiguous slices.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .fem import scatter_matrix
from .stepper import BidomainProblem, _find_entries
from .topology import Decomposition, InterfaceMap

SPD_LU = dict(permc_spec="MMD_AT_PLUS_A", diag_pivot_thresh=0.0, options=dict(SymmetricMode=True))


def factor_spd(A) -> spla.SuperLU:
    return spla.splu(sp.csc_matrix(A), **SPD_LU)


class SubdomainMatrix:
    """Local Jacobian tau*diag(A_i, A_e) + nodal blocks, in [I; Gamma] dof order."""

    def __init__(self, problem: BidomainProblem, decomp: Decomposition, imap: InterfaceMap, j: int):
        sub = decomp.subdomains[j]
        li = imap.local[j]
        self.j = j
        self.nodes = sub.nodes
        n = sub.nodes.size
        loc = np.searchsorted(sub.nodes, decomp.mesh.element_nodes[sub.elements])
        A_i = scatter_matrix(problem.em.stiff["intra"][sub.elements], loc, n).tocoo()
        A_e = scatter_matrix(problem.em.stiff["extra"][sub.elements], loc, n).tocoo()
        self.mass = np.bincount(loc.ravel(), weights=problem.em.mass[sub.elements].ravel(), minlength=n)
        # new position of each local node
        order = np.concatenate([li.interior_local_nodes, li.gamma_local_nodes])
        newpos = np.empty(n, dtype=np.int64)
        newpos[order] = np.arange(n)
        self.order = order
        self.n_interior = 2 * li.interior_local_nodes.size
        self.n_gamma = 2 * li.gamma_local_nodes.size
        tau = problem.tau
        p = newpos
        nodes = np.arange(n)
        rows = np.concatenate([2 * p[A_i.row], 2 * p[A_e.row] + 1, 2 * p, 2 * p, 2 * p + 1, 2 * p + 1])
        cols = np.concatenate([2 * p[A_i.col], 2 * p[A_e.col] + 1, 2 * p, 2 * p + 1, 2 * p, 2 * p + 1])
        vals = np.concatenate([tau * A_i.data, tau * A_e.data, np.zeros(4 * n)])
        K = sp.coo_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n)).tocsr()
        K.sum_duplicates()
        K.sort_indices()
        self.base = K
        self.base_data = K.data.copy()
        del nodes
        self.pos = np.stack([_find_entries(K, 2 * p + a, 2 * p + b) for a, b in ((0, 0), (0, 1), (1, 0), (1, 1))],
                            axis=1)
        # interior dof -> global dof; interface dof -> global interface dof
        gi = sub.nodes[li.interior_local_nodes]
        self.interior_global = np.stack([2 * gi, 2 * gi + 1], axis=1).ravel()
        gp = li.gamma_global_pos
        self.gamma_global = np.stack([2 * gp, 2 * gp + 1], axis=1).ravel()

    def matrix(self, density: np.ndarray) -> sp.csr_matrix:
        """``density`` is chi*C_m + tau*dI/dv at the subdomain's nodes (local order)."""
        c = self.mass * density
        data = self.base_data.copy()
        data[self.pos[:, 0]] += c
        data[self.pos[:, 1]] -= c
        data[self.pos[:, 2]] -= c
        data[self.pos[:, 3]] += c
        K = self.base.copy()
        K.data = data
        return K


class LocalSchur:
    """S = K_GG - K_GI K_II^-1 K_IG for one subdomain, applied matrix-free."""

    def __init__(self, K: sp.csr_matrix, n_interior: int, j: int = 0):
        self.j = j
        self.K = K
        nI = n_interior
        self.nI = nI
        self.K_II = K[:nI, :nI].tocsc()
        self.K_IG = K[:nI, nI:].tocsr()
        self.K_GI = K[nI:, :nI].tocsr()
        self.K_GG = K[nI:, nI:].tocsr()
        self.lu = factor_spd(self.K_II) if nI else None

    @property
    def n_gamma(self) -> int:
        return self.K_GG.shape[0]

    def solve_interior(self, b):
        return self.lu.solve(b) if self.nI else np.zeros_like(b)

    def apply(self, v):
        if not self.nI:
            return self.K_GG @ v
        return self.K_GG @ v - self.K_GI @ self.lu.solve(self.K_IG @ v)

    def harmonic_extension(self, v):
        """Full local vector [interior; interface] with minimal energy for trace v."""
        if not self.nI:
            return v.copy()
        return np.concatenate([-self.lu.solve(self.K_IG @ v), v])

    def dense(self) -> np.ndarray:
        if not self.nI:
            return self.K_GG.toarray()
        X = self.lu.solve(self.K_IG.toarray())
        S = self.K_GG.toarray() - self.K_GI @ X
        return 0.5 * (S + S.T)

    def energy(self, x):
        return float(x @ (self.K @ x))


class GlobalSchur:
    """Assembled interface operator sum_j R_j^T S_j R_j."""

    def __init__(self, imap: InterfaceMap, submats: list[SubdomainMatrix], locals_: list[LocalSchur],
                 pool: ThreadPoolExecutor | None = None):
        self.imap = imap
        self.submats = submats
        self.locals = locals_
        self.pool = pool
        self.n = imap.n_gamma

    def _map(self, fn, items):
        if self.pool is None:
            return [fn(x) for x in items]
        return list(self.pool.map(fn, items))

    def apply(self, v: np.ndarray) -> np.ndarray:
        out = np.zeros(self.n)
        parts = self._map(lambda j: self.locals[j].apply(v[self.submats[j].gamma_global]), range(len(self.locals)))
        for j, y in enumerate(parts):  # fixed reduction order
            np.add.at(out, self.submats[j].gamma_global, y)
        return out

    def condense_rhs(self, f: np.ndarray) -> np.ndarray:
        """f_Gamma - sum_j R_j^T K_GI K_II^-1 f_I for a full interleaved load f."""
        gdofs = np.stack([2 * self.imap.gamma_nodes, 2 * self.imap.gamma_nodes + 1], axis=1).ravel()
        out = f[gdofs].copy()
        for sm, ls in zip(self.submats, self.locals):
            if ls.nI:
                np.add.at(out, sm.gamma_global, -(ls.K_GI @ ls.solve_interior(f[sm.interior_global])))
        return out

    def recover_interior(self, u_gamma: np.ndarray, f: np.ndarray) -> np.ndarray:
        """Full interleaved solution from interface values."""
        u = np.zeros(f.size)
        gdofs = np.stack([2 * self.imap.gamma_nodes, 2 * self.imap.gamma_nodes + 1], axis=1).ravel()
        u[gdofs] = u_gamma
        for sm, ls in zip(self.submats, self.locals):
            if ls.nI:
                ug = u_gamma[sm.gamma_global]
                u[sm.interior_global] = ls.solve_interior(f[sm.interior_global] - ls.K_IG @ ug)
        return u

    def dense(self) -> np.ndarray:
        S = np.zeros((self.n, self.n))
        for sm, ls in zip(self.submats, self.locals):
            g = sm.gamma_global
            S[np.ix_(g, g)] += ls.dense()
        return S
