"""Interface scalings for the dual coordinates: rho-scaling and deluxe scaling.

Both are stored per class group (classes with equal dual size and sharer
count) so averaging and its transpose run as batched array operations.
``average`` maps W_delta to the assembled dual space; ``distribute`` is its
transpose.
"""
from __future__ import annotations

import numpy as np
import scipy.linalg as sla

from .mesh import ConductivityTensors
from .topology import InterfaceMap


class InterfaceScaling:
    kind = "none"

    def __init__(self, imap: InterfaceMap):
        self.imap = imap

    # subclasses provide _avg_group(g, u_blocks) and _dist_group(g, ghat)
    def average(self, u_delta: np.ndarray) -> np.ndarray:
        out = np.zeros(self.imap.n_dual_hat)
        for gi, g in enumerate(self.imap.groups):
            out[g.hat_idx] = self._avg_group(gi, u_delta[g.wd_idx])
        return out

    def distribute(self, g_hat: np.ndarray) -> np.ndarray:
        out = np.zeros(self.imap.n_dual)
        for gi, g in enumerate(self.imap.groups):
            out[g.wd_idx] = self._dist_group(gi, g_hat[g.hat_idx])
        return out

    # W-tilde level operators
    def apply_E_D(self, w: np.ndarray) -> np.ndarray:
        wp, wd = self.imap.split_tilde(w)
        return np.concatenate([wp, self.imap.R_dual @ self.average(wd)])

    def apply_P_D(self, w: np.ndarray) -> np.ndarray:
        """(I - E_D) w; the primal block is identically zero."""
        wp, wd = self.imap.split_tilde(w)
        return np.concatenate([np.zeros_like(wp), wd - self.imap.R_dual @ self.average(wd)])

    def apply_P_D_dual(self, wd: np.ndarray) -> np.ndarray:
        return wd - self.imap.R_dual @ self.average(wd)

    def apply_P_D_dual_t(self, wd: np.ndarray) -> np.ndarray:
        return wd - self.distribute(self.imap.R_dual_t @ wd)

    def scaled_restrict(self, xt: np.ndarray) -> np.ndarray:
        """R-tilde_D: transformed assembled covector -> W-tilde."""
        npi = self.imap.n_primal
        return np.concatenate([xt[:npi], self.distribute(xt[npi:])])

    def scaled_restrict_t(self, w: np.ndarray) -> np.ndarray:
        """R-tilde_D^T: W-tilde -> transformed assembled vector."""
        wp, wd = self.imap.split_tilde(w)
        return np.concatenate([wp, self.average(wd)])

    def partition_defect(self) -> float:
        """max |sum_s D_s - I| over all class groups."""
        err = 0.0
        for gi, g in enumerate(self.imap.groups):
            nd = g.hat_idx.shape[1]
            for k in range(nd):
                e = np.zeros((g.hat_idx.shape[0], g.wd_idx.shape[1], nd))
                e[:, :, k] = 1.0
                err = max(err, float(np.abs(self._avg_group(gi, e)[:, k] - 1.0).max()),
                          float(np.abs(np.delete(self._avg_group(gi, e), k, axis=1)).max(initial=0.0)))
        return err


class RhoScaling(InterfaceScaling):
    """Weights sigma_M(j) / sum over sharers of sigma_M, per field."""

    kind = "rho"

    def __init__(self, imap: InterfaceMap, sigma_max: np.ndarray):
        super().__init__(imap)
        sigma_max = np.asarray(sigma_max, float)  # (n_sub, 2): intra, extra
        self.sigma_max = sigma_max
        self.weights = []
        for g in imap.groups:
            s = sigma_max[g.sharers]  # (G, m, 2)
            w = s / s.sum(axis=1, keepdims=True)
            self.weights.append(w[:, :, g.field_of])  # (G, m, nd)

    @classmethod
    def from_conductivity(cls, imap: InterfaceMap, cond: ConductivityTensors):
        n = imap.decomp.num_subdomains
        sig = np.stack([cond.subdomain_max("intra", n), cond.subdomain_max("extra", n)], axis=1)
        return cls(imap, sig)

    def _avg_group(self, gi, u):
        return np.sum(self.weights[gi] * u, axis=1)

    def _dist_group(self, gi, ghat):
        return self.weights[gi] * ghat[:, None, :]

    def node_weights(self, j: int, fld: int) -> dict:
        """Class id -> weight of subdomain j for the given field."""
        out = {}
        for gi, g in enumerate(self.imap.groups):
            for row, ci in enumerate(g.classes):
                sh = list(g.sharers[row])
                if j in sh:
                    out[int(ci)] = float(self.sigma_max[j, fld] / self.sigma_max[sh, fld].sum())
        return out


class DeluxeScaling(InterfaceScaling):
    """D_s = (sum over sharers of S_s)^-1 S_s with class-restricted Schur minors S_s."""

    kind = "deluxe"

    def __init__(self, imap: InterfaceMap, minors: dict, shift: float = 1e-14):
        """``minors[(class, sub)]`` is the dense minor in that class's dual coordinates."""
        super().__init__(imap)
        self.D = []
        self.regularized = []
        for g in imap.groups:
            G, m, nd = g.wd_idx.shape
            D = np.empty((G, m, nd, nd))
            for row, ci in enumerate(g.classes):
                Ss = [minors[int(ci), int(s)] for s in g.sharers[row]]
                S_sum = sum(Ss)
                S_sum = 0.5 * (S_sum + S_sum.T)
                try:
                    cf = sla.cho_factor(S_sum)
                except np.linalg.LinAlgError:
                    S_sum = S_sum + shift * np.trace(S_sum) * np.eye(nd)
                    cf = sla.cho_factor(S_sum)
                    self.regularized.append(int(ci))
                for k, S in enumerate(Ss):
                    D[row, k] = sla.cho_solve(cf, S)
            self.D.append(D)

    def _avg_group(self, gi, u):
        return np.einsum("gsij,gsj->gi", self.D[gi], u)

    def _dist_group(self, gi, ghat):
        return np.einsum("gsji,gj->gsi", self.D[gi], ghat)


def class_minor(S_local: np.ndarray, T_class: np.ndarray) -> np.ndarray:
    """T^T S T for a class's dual basis columns T (local interface dofs x dual coords)."""
    M = T_class.T @ S_local @ T_class
    return 0.5 * (M + M.T)


def build_class_minors(imap: InterfaceMap, j: int, S_cols=None, class_ids=None, blocks: dict | None = None) -> dict:
    """Minors of subdomain j for its dual classes.

    ``S_cols(dofs)`` returns the dense columns of the local Schur complement for
    the given local interface dofs (rows over all local interface dofs).
    Alternatively ``blocks[class]`` holds the class-by-class block directly.
    """
    li = imap.local[j]
    T = li.basis.T
    out = {}
    for ci, dofs in li.class_dofs.items():
        if class_ids is not None and ci not in class_ids:
            continue
        dual = li.class_dual[ci]
        if dual.size == 0:
            continue
        Tc = T[dofs][:, li.n_primal + dual].toarray()
        Scc = blocks[ci] if blocks is not None else S_cols(dofs)[dofs]
        out[ci, j] = class_minor(Scc, Tc)
    return out
