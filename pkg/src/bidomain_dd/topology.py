"""Box decompositions, interface equivalence classes and primal spaces.

Degrees of freedom are node-interleaved: global dof ``2*node + f`` with field
``f = 0`` for u_i and ``f = 1`` for u_e.

Interface vectors live in three layouts:

* original: assembled nodal values on the global interface nodes;
* transformed: ``[primal coordinates; assembled dual coordinates]`` after the
  change of basis that turns each primal average into a coordinate;
* partially assembled (W-tilde): ``[primal coordinates; W_delta]`` where
  ``W_delta`` concatenates every subdomain's own dual coordinates.

For a class/field with ``n`` nodes whose average is primal, the basis change is
``x[k] = p + d[k-1]`` (k >= 1), ``x[0] = p - sum(d)``; its inverse is
``p = mean(x)``, ``d[k-1] = x[k] - mean(x)``.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from itertools import product

import numpy as np
import scipy.sparse as sp

from .mesh import ConfigurationError, HexMesh

KIND_ORDER = {"face": 0, "edge": 1, "vertex": 2}
PRIMAL_KINDS = ("v", "ve", "vef")


@dataclass
class Subdomain:
    index: int
    grid_pos: tuple[int, int, int]
    elements: np.ndarray
    nodes: np.ndarray  # sorted global node ids


@dataclass
class Decomposition:
    mesh: HexMesh
    grid: tuple[int, int, int]
    subdomains: list[Subdomain]
    element_subdomain: np.ndarray
    H: float
    h: float

    @property
    def num_subdomains(self) -> int:
        return len(self.subdomains)

    @property
    def local_size(self) -> tuple[int, ...]:
        return tuple(n // p for n, p in zip(self.mesh.shape, self.grid))

    def sub_index(self, a: int, b: int, c: int) -> int:
        px, py, _ = self.grid
        return a + px * (b + py * c)

    def node_axis_sets(self) -> list[list[tuple[int, ...]]]:
        """Per axis, for every grid line index, the subdomain slabs containing it."""
        out = []
        for n, p in zip(self.mesh.shape, self.grid):
            e = n // p
            sets = []
            for i in range(n + 1):
                if i % e == 0 and 0 < i < n:
                    sets.append((i // e - 1, i // e))
                else:
                    sets.append((min(i // e, p - 1),))
            out.append(sets)
        return out


def partition_box(mesh: HexMesh, grid) -> Decomposition:
    grid = tuple(int(g) for g in grid)
    if len(grid) != 3 or min(grid) < 1:
        raise ConfigurationError(f"subdomain grid must be three positive integers, got {grid}")
    for n, p in zip(mesh.shape, grid):
        if n % p:
            raise ConfigurationError(f"subdomain grid {grid} does not divide element grid {mesh.shape}")
    ex, ey, ez = (n // p for n, p in zip(mesh.shape, grid))
    eijk = mesh.element_ijk()
    sub_of = (eijk[:, 0] // ex) + grid[0] * ((eijk[:, 1] // ey) + grid[1] * (eijk[:, 2] // ez))
    subs = []
    for c, b, a in product(range(grid[2]), range(grid[1]), range(grid[0])):
        idx = a + grid[0] * (b + grid[1] * c)
        elems = np.flatnonzero(sub_of == idx)
        subs.append(Subdomain(idx, (a, b, c), elems, np.unique(mesh.element_nodes[elems])))
    # element size and subdomain diameter from the element bounding boxes
    xe = mesh.node_coords[mesh.element_nodes]
    h = float(np.max(np.linalg.norm(xe.max(axis=1) - xe.min(axis=1), axis=1)))
    H = 0.0
    for s in subs:
        xs = mesh.node_coords[s.nodes]
        H = max(H, float(np.linalg.norm(xs.max(axis=0) - xs.min(axis=0))))
    return Decomposition(mesh, grid, subs, sub_of, H, h)


@dataclass
class EquivalenceClass:
    kind: str
    sharers: tuple[int, ...]
    nodes: np.ndarray  # sorted global node ids

    def dofs(self, fld: int) -> np.ndarray:
        return 2 * self.nodes + fld


def classify_interface(decomp: Decomposition, boundary_split: bool = False) -> list[EquivalenceClass]:
    """Group interface nodes by their sharing set; deterministic ordering.

    With ``boundary_split`` the outer boundary acts as one more sharer: interface
    nodes on it form their own classes and each boundary plane they lie on adds
    to the codimension (a face strip on the boundary becomes an edge, and so on).
    """
    mesh = decomp.mesh
    axis_sets = decomp.node_axis_sets()
    ijk = mesh.node_ijk()
    sx = np.array([len(s) for s in axis_sets[0]])[ijk[:, 0]]
    sy = np.array([len(s) for s in axis_sets[1]])[ijk[:, 1]]
    sz = np.array([len(s) for s in axis_sets[2]])[ijk[:, 2]]
    gamma = np.flatnonzero((sx > 1) | (sy > 1) | (sz > 1))
    groups: dict[tuple, list[int]] = {}
    for n in gamma:
        i, j, k = ijk[n]
        bnd = ()
        if boundary_split:
            bnd = tuple(int(q == 0) - int(q == nq) for q, nq in zip((i, j, k), mesh.shape))
        key = (axis_sets[0][i], axis_sets[1][j], axis_sets[2][k], bnd)
        groups.setdefault(key, []).append(n)
    classes = []
    for (xs, ys, zs, bnd), nodes in groups.items():
        sharers = tuple(sorted(decomp.sub_index(a, b, c) for a in xs for b in ys for c in zs))
        codim = (len(xs) > 1) + (len(ys) > 1) + (len(zs) > 1) + sum(b != 0 for b in bnd)
        kind = {1: "face", 2: "edge", 3: "vertex"}[codim]
        classes.append(EquivalenceClass(kind, sharers, np.array(sorted(nodes), dtype=np.int64)))
    classes.sort(key=lambda c: (c.sharers, int(c.nodes[0])))
    return classes


def dump_classes(classes, path) -> None:
    """Debug dump, one JSON object per line."""
    with open(path, "w") as fh:
        for c in classes:
            fh.write(json.dumps({"kind": c.kind, "sharers": list(c.sharers), "size": int(c.nodes.size)}) + "\n")


@dataclass
class PrimalSpace:
    kind: str
    modes: list  # per class: "point", "average" or None

    @property
    def num_constraints(self) -> int:
        return 2 * sum(m is not None for m in self.modes)


def build_primal_space(classes, kind: str) -> PrimalSpace:
    kind = kind.lower().replace("+", "")
    if kind not in PRIMAL_KINDS:
        raise ConfigurationError(f"primal space must be one of {PRIMAL_KINDS}, got {kind!r}")
    modes = []
    for c in classes:
        if c.kind == "vertex":
            modes.append("point")
        elif c.kind == "edge" and kind in ("ve", "vef"):
            modes.append("average")
        elif c.kind == "face" and kind == "vef":
            modes.append("average")
        else:
            modes.append(None)
    return PrimalSpace(kind, modes)


def primal_functional(cls: EquivalenceClass, mode: str, fld: int, num_dofs: int) -> np.ndarray:
    """Dense coefficient row of one primal constraint over the global dofs."""
    row = np.zeros(num_dofs)
    if mode == "point":
        row[2 * cls.nodes[0] + fld] = 1.0
    else:
        row[2 * cls.nodes + fld] = 1.0 / cls.nodes.size
    return row


class BasisChange:
    """Sparse change of basis between original and transformed interface coordinates.

    ``T`` maps transformed -> original; the inverse is kept factored as
    ``Sel + Emb @ Avg`` to avoid dense class blocks.
    """

    def __init__(self, n_orig: int, n_primal: int, n_dual: int, entries):
        self.n_orig, self.n_primal, self.n_dual = n_orig, n_primal, n_dual
        nt = n_primal + n_dual
        Tr, Tc, Tv = [], [], []
        Sr, Sc = [], []
        Ar, Ac, Av = [], [], []
        Er, Ec, Ev = [], [], []
        n_avg = 0
        for dofs, mode, p_idx, d_idx in entries:
            n = dofs.size
            if mode == "point":
                Tr.append(dofs[:1]); Tc.append([p_idx]); Tv.append([1.0])
                Sr.append([p_idx]); Sc.append(dofs[:1])
            elif mode == "average":
                dcols = n_primal + np.asarray(d_idx)
                Tr += [dofs, dofs[1:], np.full(n - 1, dofs[0])]
                Tc += [np.full(n, p_idx), dcols, dcols]
                Tv += [np.ones(n), np.ones(n - 1), -np.ones(n - 1)]
                Sr.append(dcols); Sc.append(dofs[1:])
                Ar.append(np.full(n, n_avg)); Ac.append(dofs); Av.append(np.full(n, 1.0 / n))
                Er += [[p_idx], dcols]; Ec += [[n_avg], np.full(n - 1, n_avg)]
                Ev += [[1.0], -np.ones(n - 1)]
                n_avg += 1
            else:
                dcols = n_primal + np.asarray(d_idx)
                Tr.append(dofs); Tc.append(dcols); Tv.append(np.ones(n))
                Sr.append(dcols); Sc.append(dofs)

        def cat(parts, dtype=float):
            return np.concatenate([np.asarray(p, dtype=dtype) for p in parts]) if parts else np.zeros(0, dtype)

        self.T = sp.csr_matrix((cat(Tv), (cat(Tr, int), cat(Tc, int))), shape=(n_orig, nt))
        self.Sel = sp.csr_matrix((np.ones(sum(len(s) for s in Sr)), (cat(Sr, int), cat(Sc, int))), shape=(nt, n_orig))
        self.Avg = sp.csr_matrix((cat(Av), (cat(Ar, int), cat(Ac, int))), shape=(n_avg, n_orig))
        self.Emb = sp.csr_matrix((cat(Ev), (cat(Er, int), cat(Ec, int))), shape=(nt, n_avg))
        self.T_t = self.T.T.tocsr()
        self.Sel_t = self.Sel.T.tocsr()
        self.Avg_t = self.Avg.T.tocsr()
        self.Emb_t = self.Emb.T.tocsr()

    def to_original(self, xt):
        return self.T @ xt

    def to_transformed(self, x):
        return self.Sel @ x + self.Emb @ (self.Avg @ x)

    def cov_to_transformed(self, g):
        return self.T_t @ g

    def cov_to_original(self, gt):
        return self.Sel_t @ gt + self.Avg_t @ (self.Emb_t @ gt)

    def dense_T(self) -> np.ndarray:
        return self.T.toarray()


@dataclass
class ClassGroup:
    """Dual classes sharing (dual size, sharer count), stacked for batched operations."""

    classes: np.ndarray  # (G,) class ids
    hat_idx: np.ndarray  # (G, nd) positions in the assembled dual vector
    wd_idx: np.ndarray  # (G, m, nd) positions in W_delta
    sharers: np.ndarray  # (G, m) subdomain ids
    field_of: np.ndarray  # (nd,) field of each dual coordinate


@dataclass
class LocalInterface:
    """Interface bookkeeping of one subdomain."""

    gamma_local_nodes: np.ndarray  # positions in Subdomain.nodes
    interior_local_nodes: np.ndarray
    gamma_global_pos: np.ndarray  # positions of its interface nodes in InterfaceMap.gamma_nodes
    primal_global: np.ndarray  # global primal index of each local primal coordinate
    dual_slice: slice  # its block of W_delta
    basis: BasisChange  # local original Gamma dofs <-> [local primal; local dual]
    constraints: sp.csr_matrix  # local primal functionals over local Gamma dofs
    class_dofs: dict = field(default_factory=dict)  # class id -> local Gamma dof positions (field-blocked)
    class_dual: dict = field(default_factory=dict)  # class id -> local dual positions (field-blocked)

    @property
    def n_gamma(self) -> int:
        return 2 * self.gamma_local_nodes.size

    @property
    def n_primal(self) -> int:
        return self.primal_global.size

    @property
    def n_dual(self) -> int:
        return self.dual_slice.stop - self.dual_slice.start


class InterfaceMap:
    """All index maps and operators tying subdomains, classes and primal space together."""

    def __init__(self, decomp: Decomposition, classes=None, primal: PrimalSpace | str = "vef",
                 boundary_split: bool = False):
        self.decomp = decomp
        self.classes = classify_interface(decomp, boundary_split) if classes is None else classes
        if isinstance(primal, str):
            primal = build_primal_space(self.classes, primal)
        self.primal = primal
        nodes = [c.nodes for c in self.classes]
        self.gamma_nodes = np.sort(np.concatenate(nodes)) if nodes else np.zeros(0, dtype=np.int64)
        self.n_gamma = 2 * self.gamma_nodes.size
        self.is_gamma = np.zeros(decomp.mesh.num_nodes, dtype=bool)
        self.is_gamma[self.gamma_nodes] = True

        # primal numbering (class order, then field) and assembled-dual numbering
        self.primal_index = {}
        self.dual_hat = {}
        self.n_primal = 0
        n_hat = 0
        self.class_nd = []
        for ci, (c, mode) in enumerate(zip(self.classes, primal.modes)):
            n = c.nodes.size
            if mode is not None:
                for f in (0, 1):
                    self.primal_index[ci, f] = self.n_primal
                    self.n_primal += 1
            nd_f = 0 if mode == "point" else (n - 1 if mode == "average" else n)
            self.class_nd.append(2 * nd_f)
            for f in (0, 1):
                self.dual_hat[ci, f] = np.arange(n_hat, n_hat + nd_f)
                n_hat += nd_f
        self.n_dual_hat = n_hat

        gpos = {ci: np.searchsorted(self.gamma_nodes, c.nodes) for ci, c in enumerate(self.classes)}
        entries = []
        for ci, mode in enumerate(primal.modes):
            for f in (0, 1):
                entries.append((2 * gpos[ci] + f, mode, self.primal_index.get((ci, f)), self.dual_hat[ci, f]))
        self.basis = BasisChange(self.n_gamma, self.n_primal, self.n_dual_hat, entries)

        # per-subdomain structures; W_delta ordered by subdomain, class, field, coordinate
        sub_classes = [[] for _ in decomp.subdomains]
        for ci, c in enumerate(self.classes):
            for s in c.sharers:
                sub_classes[s].append(ci)
        self.local: list[LocalInterface] = []
        self.wd_block = {}  # (class, sub) -> W_delta positions (field-blocked)
        off = 0
        for sub in decomp.subdomains:
            j = sub.index
            is_g = self.is_gamma[sub.nodes]
            g_loc = np.flatnonzero(is_g)
            i_loc = np.flatnonzero(~is_g)
            g_nodes = sub.nodes[g_loc]
            p_glob, entries, crow, ccol, cval = [], [], [], [], []
            n_loc_dual = 0
            class_dofs, class_dual = {}, {}
            for ci in sub_classes[j]:
                c = self.classes[ci]
                mode = primal.modes[ci]
                lpos = np.searchsorted(g_nodes, c.nodes)
                dofs_f, dual_f = [], []
                for f in (0, 1):
                    dofs = 2 * lpos + f
                    p_idx = None
                    if mode is not None:
                        p_idx = len(p_glob)
                        p_glob.append(self.primal_index[ci, f])
                        if mode == "point":
                            crow.append(p_idx); ccol.append(dofs[0]); cval.append(1.0)
                        else:
                            crow += [p_idx] * dofs.size; ccol += list(dofs); cval += [1.0 / dofs.size] * dofs.size
                    nd_f = self.dual_hat[ci, f].size
                    d_idx = np.arange(n_loc_dual, n_loc_dual + nd_f)
                    n_loc_dual += nd_f
                    entries.append((dofs, mode, p_idx, d_idx))
                    dofs_f.append(dofs)
                    dual_f.append(d_idx)
                class_dofs[ci] = np.concatenate(dofs_f)
                class_dual[ci] = np.concatenate(dual_f)
                self.wd_block[ci, j] = off + class_dual[ci]
            n_g = 2 * g_nodes.size
            basis = BasisChange(n_g, len(p_glob), n_loc_dual, entries)
            C = sp.csr_matrix((cval, (crow, ccol)), shape=(len(p_glob), n_g))
            self.local.append(LocalInterface(
                g_loc, i_loc, np.searchsorted(self.gamma_nodes, g_nodes), np.array(p_glob, dtype=np.int64),
                slice(off, off + n_loc_dual), basis, C, class_dofs, class_dual))
            off += n_loc_dual
        self.n_dual = off

        # assembled dual -> W_delta copy matrix
        rows, cols = [], []
        for ci, c in enumerate(self.classes):
            hat = np.concatenate([self.dual_hat[ci, 0], self.dual_hat[ci, 1]])
            for s in c.sharers:
                rows.append(self.wd_block[ci, s])
                cols.append(hat)
        rows = np.concatenate(rows) if rows else np.zeros(0, int)
        cols = np.concatenate(cols) if cols else np.zeros(0, int)
        self.R_dual = sp.csr_matrix((np.ones(rows.size), (rows, cols)), shape=(self.n_dual, self.n_dual_hat))
        self.R_dual_t = self.R_dual.T.tocsr()
        self.groups = self._build_groups()

        # copies of global primal coordinates held by each subdomain
        self.primal_copies = np.concatenate([li.primal_global for li in self.local]) if self.local else np.zeros(0, int)
        self.multiplicity = np.asarray(self.R_dual.sum(axis=0)).ravel()

    def _build_groups(self) -> list[ClassGroup]:
        buckets: dict[tuple[int, int], list[int]] = {}
        for ci, c in enumerate(self.classes):
            if self.class_nd[ci] == 0:
                continue
            buckets.setdefault((self.class_nd[ci], len(c.sharers)), []).append(ci)
        groups = []
        for (nd, m), cis in sorted(buckets.items()):
            hat = np.array([np.concatenate([self.dual_hat[ci, 0], self.dual_hat[ci, 1]]) for ci in cis])
            wd = np.array([[self.wd_block[ci, s] for s in self.classes[ci].sharers] for ci in cis])
            shr = np.array([self.classes[ci].sharers for ci in cis])
            field_of = np.repeat([0, 1], nd // 2)
            groups.append(ClassGroup(np.array(cis), hat, wd, shr, field_of))
        return groups

    # --- layout helpers -------------------------------------------------
    @property
    def n_tilde(self) -> int:
        return self.n_primal + self.n_dual

    def split_tilde(self, w):
        return w[: self.n_primal], w[self.n_primal:]

    def restrict_continuous(self, xt):
        """R-tilde: transformed continuous vector -> W-tilde."""
        return np.concatenate([xt[: self.n_primal], self.R_dual @ xt[self.n_primal:]])

    def jump_free(self, w) -> bool:
        """True when every shared dual coordinate agrees across its sharers."""
        _, wd = self.split_tilde(w)
        return all(np.allclose(wd[g.wd_idx], wd[g.wd_idx][:, :1]) for g in self.groups)

    def gamma_kernel(self) -> np.ndarray:
        return np.ones(self.n_gamma) / np.sqrt(max(self.n_gamma, 1))

    def check_counts(self) -> tuple[int, int]:
        """(sum_j |Gamma_j| nodes, sum_c |c| * |sharers|) -- equal by construction."""
        a = sum(li.gamma_local_nodes.size for li in self.local)
        b = sum(c.nodes.size * len(c.sharers) for c in self.classes)
        return a, b

    def constraint_gramian(self) -> np.ndarray:
        rows = []
        num = 2 * self.decomp.mesh.num_nodes
        for ci, mode in enumerate(self.primal.modes):
            if mode is None:
                continue
            for f in (0, 1):
                rows.append(primal_functional(self.classes[ci], mode, f, num))
        if not rows:
            return np.zeros((0, 0))
        C = np.array(rows)
        return C @ C.T


def restriction_operators(imap: InterfaceMap) -> dict:
    """Explicit sparse restriction operators, mostly for inspection and testing.

    ``T`` maps transformed interface coordinates to original ones; ``R_GP``,
    ``R_GD`` and ``R_tilde`` act on transformed coordinates.
    """
    npi, nh, nd = imap.n_primal, imap.n_dual_hat, imap.n_dual
    R_GP = sp.hstack([sp.identity(npi), sp.csr_matrix((npi, nh))]).tocsr()
    R_GD = sp.hstack([sp.csr_matrix((nd, npi)), imap.R_dual]).tocsr()
    ops = {
        "T": imap.basis.T,
        "R_GP": R_GP,
        "R_GD": R_GD,
        "R_tilde": sp.vstack([R_GP, R_GD]).tocsr(),
        "R_G": [],
        "R_D": [],
        "R_P": [],
    }
    for li in imap.local:
        gdofs = np.empty(li.n_gamma, dtype=int)
        gdofs[0::2] = 2 * li.gamma_global_pos
        gdofs[1::2] = 2 * li.gamma_global_pos + 1
        ops["R_G"].append(sp.csr_matrix((np.ones(gdofs.size), (np.arange(gdofs.size), gdofs)),
                                        shape=(gdofs.size, imap.n_gamma)))
        d = np.arange(li.dual_slice.start, li.dual_slice.stop)
        ops["R_D"].append(sp.csr_matrix((np.ones(d.size), (np.arange(d.size), d)), shape=(d.size, nd)))
        ops["R_P"].append(sp.csr_matrix((np.ones(li.n_primal), (np.arange(li.n_primal), li.primal_global)),
                                        shape=(li.n_primal, npi)))
    return ops
