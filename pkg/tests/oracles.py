"""Dense reference implementations, written independently of the package internals."""
from __future__ import annotations

import itertools

import numpy as np
import scipy.linalg as sla

GP = (-1 / np.sqrt(3), 1 / np.sqrt(3))
# lexicographic corner order: x fastest, then y, then z
CORNER_SIGNS = [(sx, sy, sz) for sz in (-1, 1) for sy in (-1, 1) for sx in (-1, 1)]


def hex_stiffness(xe, D):
    """Q1 stiffness of one hexahedron by explicit loops over 2x2x2 Gauss points."""
    K = np.zeros((8, 8))
    for xi, eta, zeta in itertools.product(GP, GP, GP):
        dN = np.array([[s[0] * (1 + s[1] * eta) * (1 + s[2] * zeta),
                        s[1] * (1 + s[0] * xi) * (1 + s[2] * zeta),
                        s[2] * (1 + s[0] * xi) * (1 + s[1] * eta)] for s in CORNER_SIGNS]) / 8.0
        J = dN.T @ xe
        G = dN @ np.linalg.inv(J).T
        K += G @ D @ G.T * np.linalg.det(J)
    return K


def hex_consistent_mass(xe):
    M = np.zeros((8, 8))
    for xi, eta, zeta in itertools.product(GP, GP, GP):
        N = np.array([(1 + s[0] * xi) * (1 + s[1] * eta) * (1 + s[2] * zeta) for s in CORNER_SIGNS]) / 8.0
        dN = np.array([[s[0] * (1 + s[1] * eta) * (1 + s[2] * zeta),
                        s[1] * (1 + s[0] * xi) * (1 + s[2] * zeta),
                        s[2] * (1 + s[0] * xi) * (1 + s[1] * eta)] for s in CORNER_SIGNS]) / 8.0
        M += np.outer(N, N) * np.linalg.det(dN.T @ xe)
    return M


def assemble_dense(mesh, tensors, elements=None, nodes=None):
    """Dense stiffness over ``nodes`` (sorted global ids) from the given elements."""
    elements = range(mesh.num_elements) if elements is None else elements
    nodes = np.arange(mesh.num_nodes) if nodes is None else np.asarray(nodes)
    pos = {int(n): k for k, n in enumerate(nodes)}
    A = np.zeros((nodes.size, nodes.size))
    for e in elements:
        conn = mesh.element_nodes[e]
        Ke = hex_stiffness(mesh.node_coords[conn], tensors[e])
        idx = [pos[int(n)] for n in conn]
        A[np.ix_(idx, idx)] += Ke
    return A


def dense_mass_rowsum(mesh, elements=None, nodes=None):
    elements = range(mesh.num_elements) if elements is None else elements
    nodes = np.arange(mesh.num_nodes) if nodes is None else np.asarray(nodes)
    pos = {int(n): k for k, n in enumerate(nodes)}
    m = np.zeros(nodes.size)
    for e in elements:
        conn = mesh.element_nodes[e]
        Me = hex_consistent_mass(mesh.node_coords[conn])
        for a, n in enumerate(conn):
            m[pos[int(n)]] += Me[a].sum()
    return m


def coupled_dense(A_i, A_e, tau, coeff):
    """Interleaved 2-field Jacobian tau*diag(A_i, A_e) + [c, -c; -c, c]."""
    n = A_i.shape[0]
    K = np.zeros((2 * n, 2 * n))
    K[0::2, 0::2] = tau * A_i + np.diag(coeff)
    K[1::2, 1::2] = tau * A_e + np.diag(coeff)
    K[0::2, 1::2] = -np.diag(coeff)
    K[1::2, 0::2] = -np.diag(coeff)
    return K


def schur_dense(K, interior, gamma):
    KII = K[np.ix_(interior, interior)]
    KIG = K[np.ix_(interior, gamma)]
    S = K[np.ix_(gamma, gamma)] - KIG.T @ np.linalg.solve(KII, KIG)
    return 0.5 * (S + S.T)


class DenseBDDC:
    """BDDC built from dense local Schur complements in original interface coordinates.

    The partially assembled space is the null space of the primal-continuity
    constraints, handled through an orthonormal basis Q; the scaled
    restriction is the plain weighted copy D_s R_s of the residual.
    """

    def __init__(self, problem, decomp, classes, primal_modes, coeff, sigma_max):
        mesh = problem.mesh
        from bidomain_dd.mesh import conductivity_tensors
        Di = conductivity_tensors(mesh, problem.cond, "intra")
        De = conductivity_tensors(mesh, problem.cond, "extra")
        tau = problem.tau
        gamma_nodes = np.unique(np.concatenate([c.nodes for c in classes]))
        gpos = {int(n): k for k, n in enumerate(gamma_nodes)}
        self.n_gamma = 2 * gamma_nodes.size
        density = coeff / problem.mass
        blocks, rows = [], []
        self.local_gamma = []
        for sub in decomp.subdomains:
            nodes = sub.nodes
            A_i = assemble_dense(mesh, Di, sub.elements, nodes)
            A_e = assemble_dense(mesh, De, sub.elements, nodes)
            m = dense_mass_rowsum(mesh, sub.elements, nodes)
            K = coupled_dense(A_i, A_e, tau, m * density[nodes])
            is_g = np.isin(nodes, gamma_nodes)
            gl = np.flatnonzero(is_g)
            il = np.flatnonzero(~is_g)
            g_dofs = np.ravel(np.column_stack([2 * gl, 2 * gl + 1]))
            i_dofs = np.ravel(np.column_stack([2 * il, 2 * il + 1]))
            blocks.append(schur_dense(K, i_dofs, g_dofs))
            glob = np.ravel(np.column_stack([2 * np.array([gpos[int(n)] for n in nodes[gl]]),
                                             2 * np.array([gpos[int(n)] for n in nodes[gl]]) + 1]))
            self.local_gamma.append(glob)
        offs = np.cumsum([0] + [b.shape[0] for b in blocks])
        nW = offs[-1]
        self.S_blk = sla.block_diag(*blocks)
        # R: assembled interface -> stacked local copies
        R = np.zeros((nW, self.n_gamma))
        for j, glob in enumerate(self.local_gamma):
            R[offs[j] + np.arange(glob.size), glob] = 1.0
        self.R = R
        self.S_hat = R.T @ self.S_blk @ R

        def local_rows(j, dofs_global):
            where = {int(g): k for k, g in enumerate(self.local_gamma[j])}
            return np.array([offs[j] + where[int(d)] for d in dofs_global])

        cons = []
        RD = np.zeros((nW, self.n_gamma))
        for c, mode in zip(classes, primal_modes):
            for f in (0, 1):
                gd = 2 * np.array([gpos[int(n)] for n in c.nodes]) + f
                func = np.zeros(gd.size)
                if mode == "point":
                    func[0] = 1.0
                elif mode == "average":
                    func[:] = 1.0 / gd.size
                w = sigma_max[list(c.sharers), f]
                w = w / w.sum()
                for k, s in enumerate(c.sharers):
                    lr = local_rows(s, gd)
                    RD[np.ix_(lr, gd)] += w[k] * np.eye(gd.size)
                    if mode is not None and k > 0:
                        row = np.zeros(nW)
                        row[local_rows(c.sharers[0], gd)] += func
                        row[lr] -= func
                        cons.append(row)
        self.RD = RD
        C = np.array(cons) if cons else np.zeros((0, nW))
        self.Q = sla.null_space(C) if cons else np.eye(nW)
        St = self.Q.T @ self.S_blk @ self.Q
        self.S_tilde_pinv = np.linalg.pinv(0.5 * (St + St.T), rcond=1e-13, hermitian=True)
        ones = np.ones(self.n_gamma) / np.sqrt(self.n_gamma)
        self.P = np.eye(self.n_gamma) - np.outer(ones, ones)
        M = self.RD.T @ self.Q @ self.S_tilde_pinv @ self.Q.T @ self.RD
        self.M = self.P @ M @ self.P

    def preconditioned_eigs(self):
        """Eigenvalues of M S_hat on the complement of the joint constant."""
        basis = sla.null_space(np.ones((1, self.n_gamma)))
        A = basis.T @ self.S_hat @ basis
        B = basis.T @ self.M @ basis
        # M S on the range equals B A in an orthonormal basis
        return np.sort(np.linalg.eigvals(B @ A).real)
