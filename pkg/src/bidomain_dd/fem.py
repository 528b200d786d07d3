"""Q1 stiffness and lumped mass assembly on structured hexahedral meshes."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .mesh import CORNERS, ConductivityTensors, HexMesh, conductivity_tensors

_G = 1.0 / np.sqrt(3.0)
# 2x2x2 Gauss-Legendre points on [-1, 1]^3, all weights 1
GAUSS_POINTS = np.array([[sx, sy, sz] for sz in (-_G, _G) for sy in (-_G, _G) for sx in (-_G, _G)])
GAUSS_WEIGHTS = np.ones(8)
_SIGNS = 2 * CORNERS - 1  # (8, 3) in {-1, +1}


def shape_functions(xi: np.ndarray) -> np.ndarray:
    """Trilinear shape functions at reference points xi (Q, 3) -> (Q, 8)."""
    return np.prod(1.0 + xi[:, None, :] * _SIGNS[None, :, :], axis=2) / 8.0


def shape_gradients(xi: np.ndarray) -> np.ndarray:
    """Reference gradients (Q, 8, 3)."""
    f = 1.0 + xi[:, None, :] * _SIGNS[None, :, :]
    g = np.empty_like(f)
    g[..., 0] = _SIGNS[:, 0] * f[..., 1] * f[..., 2]
    g[..., 1] = _SIGNS[:, 1] * f[..., 0] * f[..., 2]
    g[..., 2] = _SIGNS[:, 2] * f[..., 0] * f[..., 1]
    return g / 8.0


_N = shape_functions(GAUSS_POINTS)
_DN = shape_gradients(GAUSS_POINTS)


def element_geometry(xe: np.ndarray):
    """Physical gradients (E, Q, 8, 3) and det J (E, Q) for element node coords xe (E, 8, 3)."""
    J = np.einsum("qad,eai->eqid", _DN, xe)  # dx_i / dxi_d
    det = np.linalg.det(J)
    invJ = np.linalg.inv(J)
    grads = np.einsum("qad,eqdi->eqai", _DN, invJ)
    return grads, det


def _stiffness(grads, D, w):
    flux = np.einsum("eij,eqbj->eqbi", D, grads) * w[:, :, None, None]
    return np.einsum("eqai,eqbi->eab", grads, flux, optimize=True)


def element_stiffness(xe: np.ndarray, D: np.ndarray) -> np.ndarray:
    grads, det = element_geometry(xe)
    return _stiffness(grads, D, det * GAUSS_WEIGHTS)


def element_lumped_mass(xe: np.ndarray) -> np.ndarray:
    _, det = element_geometry(xe)
    return np.einsum("qa,eq->ea", _N, det * GAUSS_WEIGHTS)


def element_consistent_mass(xe: np.ndarray) -> np.ndarray:
    _, det = element_geometry(xe)
    return np.einsum("qa,qb,eq->eab", _N, _N, det * GAUSS_WEIGHTS)


def jacobian_determinants(mesh: HexMesh) -> np.ndarray:
    return element_geometry(mesh.node_coords[mesh.element_nodes])[1]


class ElementMatrices:
    """Per-element Q1 stiffness (intra, extra) and lumped mass, computed once per mesh."""

    def __init__(self, mesh: HexMesh, cond: ConductivityTensors, element_subdomain=None, chunk: int = 8192):
        self.mesh = mesh
        E = mesh.num_elements
        self.stiff = {"intra": np.empty((E, 8, 8)), "extra": np.empty((E, 8, 8))}
        self.mass = np.empty((E, 8))
        Di = conductivity_tensors(mesh, cond, "intra", element_subdomain)
        De = conductivity_tensors(mesh, cond, "extra", element_subdomain)
        for s in range(0, E, chunk):
            sl = slice(s, min(s + chunk, E))
            xe = mesh.node_coords[mesh.element_nodes[sl]]
            grads, det = element_geometry(xe)
            w = det * GAUSS_WEIGHTS
            self.stiff["intra"][sl] = _stiffness(grads, Di[sl], w)
            self.stiff["extra"][sl] = _stiffness(grads, De[sl], w)
            self.mass[sl] = np.einsum("qa,eq->ea", _N, w)


def local_nodes(mesh: HexMesh, element_subset=None) -> np.ndarray:
    if element_subset is None:
        return np.arange(mesh.num_nodes)
    return np.unique(mesh.element_nodes[element_subset])


def _local_connectivity(mesh, element_subset, nodes):
    elems = np.arange(mesh.num_elements) if element_subset is None else np.asarray(element_subset)
    conn = mesh.element_nodes[elems]
    if nodes is None:
        nodes = local_nodes(mesh, element_subset)
    loc = np.searchsorted(nodes, conn)
    return elems, loc, nodes


def scatter_matrix(Ke: np.ndarray, loc: np.ndarray, n: int) -> sp.csr_matrix:
    rows = np.repeat(loc, 8, axis=1).ravel()
    cols = np.tile(loc, (1, 8)).ravel()
    A = sp.coo_matrix((Ke.ravel(), (rows, cols)), shape=(n, n)).tocsr()
    A.sum_duplicates()
    return A


def assemble_stiffness(mesh: HexMesh, cond: ConductivityTensors, which: str, element_subset=None,
                       nodes=None, element_matrices: ElementMatrices | None = None,
                       element_subdomain=None) -> sp.csr_matrix:
    """Stiffness matrix over ``element_subset`` (all elements by default).

    Rows follow ``nodes`` (sorted global ids; defaults to the nodes the subset touches).
    """
    elems, loc, nodes = _local_connectivity(mesh, element_subset, nodes)
    if element_matrices is None:
        xe = mesh.node_coords[mesh.element_nodes[elems]]
        D = conductivity_tensors(mesh, cond, which, element_subdomain)[elems]
        Ke = element_stiffness(xe, D)
    else:
        Ke = element_matrices.stiff["intra" if which in ("intra", "i") else "extra"][elems]
    return scatter_matrix(Ke, loc, nodes.size)


def assemble_lumped_mass(mesh: HexMesh, element_subset=None, nodes=None,
                         element_matrices: ElementMatrices | None = None) -> np.ndarray:
    """Row-sum lumped mass vector (cm^3) over ``element_subset``."""
    elems, loc, nodes = _local_connectivity(mesh, element_subset, nodes)
    if element_matrices is None:
        me = element_lumped_mass(mesh.node_coords[mesh.element_nodes[elems]])
    else:
        me = element_matrices.mass[elems]
    return np.bincount(loc.ravel(), weights=me.ravel(), minlength=nodes.size)


def assemble_consistent_mass(mesh: HexMesh, element_subset=None, nodes=None) -> sp.csr_matrix:
    elems, loc, nodes = _local_connectivity(mesh, element_subset, nodes)
    Me = element_consistent_mass(mesh.node_coords[mesh.element_nodes[elems]])
    return scatter_matrix(Me, loc, nodes.size)


def mesh_volume(mesh: HexMesh) -> float:
    return float(np.sum(jacobian_determinants(mesh) * GAUSS_WEIGHTS))


def write_matrix_market(path, A) -> None:
    import scipy.io

    scipy.io.mmwrite(str(path), sp.coo_matrix(A))
