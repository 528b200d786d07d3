"""Structured Q1 hexahedral meshes for slab and truncated-ellipsoid domains.

Nodes and elements are numbered lexicographically with x fastest.  Local
element node ``a`` sits at reference corner ``(a & 1, (a >> 1) & 1, a >> 2)``.
Each element carries an orthonormal fiber frame (rows ``a_l, a_t, a_n``)
evaluated at its centroid.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class ConfigurationError(ValueError):
    """Raised for invalid mesh, decomposition or experiment configurations."""


# local node a -> reference corner offsets
CORNERS = np.array([[a & 1, (a >> 1) & 1, a >> 2] for a in range(8)])


@dataclass
class MeshConfig:
    geometry: str = "slab"
    nx: int = 4
    ny: int = 4
    nz: int = 4
    slab_extent: tuple[float, float, float] = (1.92, 1.92, 0.48)
    # truncated ellipsoid semi-axes (cm); repository defaults, not measured data
    a1: float = 1.5
    a2: float = 2.7
    b1: float = 1.5
    b2: float = 2.7
    c1: float = 4.4
    c2: float = 5.0
    phi_min: float = -np.pi / 2
    phi_max: float = 0.0
    theta_min: float = -3 * np.pi / 8
    theta_max: float = np.pi / 8
    fiber_rotation_total: float = 120.0

    @property
    def element_counts(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def num_nodes(self) -> int:
        return (self.nx + 1) * (self.ny + 1) * (self.nz + 1)

    def validate(self) -> None:
        if self.geometry not in ("slab", "ellipsoid"):
            raise ConfigurationError(f"unknown geometry {self.geometry!r}")
        if min(self.element_counts) < 1:
            raise ConfigurationError(f"element counts must be >= 1, got {self.element_counts}")
        if self.geometry == "slab":
            if min(self.slab_extent) <= 0:
                raise ConfigurationError(f"slab extent must be positive, got {self.slab_extent}")
        else:
            if not (self.a2 > self.a1 > 0 and self.b2 > self.b1 > 0 and self.c2 > self.c1 > 0):
                raise ConfigurationError("ellipsoid axes need 0 < a1 < a2, 0 < b1 < b2, 0 < c1 < c2")
            if not (self.phi_min < self.phi_max and self.theta_min < self.theta_max):
                raise ConfigurationError("empty angle range")
            if self.theta_min <= -np.pi / 2 or self.theta_max >= np.pi / 2:
                raise ConfigurationError("theta range touches a pole of the ellipsoid")


@dataclass
class HexMesh:
    shape: tuple[int, int, int]
    node_coords: np.ndarray  # (N, 3)
    element_nodes: np.ndarray  # (E, 8)
    fibers: np.ndarray  # (E, 3, 3), rows a_l, a_t, a_n
    geometry: str = "slab"
    # per-node transmural parameter in [0, 1]: z/Lz on the slab, r on the ellipsoid
    depth: np.ndarray = field(default=None, repr=False)

    @property
    def num_nodes(self) -> int:
        return self.node_coords.shape[0]

    @property
    def num_elements(self) -> int:
        return self.element_nodes.shape[0]

    @property
    def node_shape(self) -> tuple[int, int, int]:
        nx, ny, nz = self.shape
        return (nx + 1, ny + 1, nz + 1)

    def node_index(self, i, j, k):
        nx, ny, _ = self.shape
        return i + (nx + 1) * (j + (ny + 1) * k)

    def element_index(self, i, j, k):
        nx, ny, _ = self.shape
        return i + nx * (j + ny * k)

    def node_ijk(self) -> np.ndarray:
        """(N, 3) integer grid coordinates of every node."""
        nx, ny, nz = self.shape
        k, j, i = np.meshgrid(np.arange(nz + 1), np.arange(ny + 1), np.arange(nx + 1), indexing="ij")
        return np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)

    def element_ijk(self) -> np.ndarray:
        nx, ny, nz = self.shape
        k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
        return np.stack([i.ravel(), j.ravel(), k.ravel()], axis=1)

    def element_centroids(self) -> np.ndarray:
        return self.node_coords[self.element_nodes].mean(axis=1)


def structured_connectivity(nx: int, ny: int, nz: int) -> np.ndarray:
    k, j, i = np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")
    i, j, k = i.ravel(), j.ravel(), k.ravel()
    conn = np.empty((i.size, 8), dtype=np.int64)
    for a, (di, dj, dk) in enumerate(CORNERS):
        conn[:, a] = (i + di) + (nx + 1) * ((j + dj) + (ny + 1) * (k + dk))
    return conn


def _rotation_angles(depth: np.ndarray, total_deg: float) -> np.ndarray:
    # linear in depth, symmetric about mid-wall
    return np.deg2rad(total_deg) * (depth - 0.5)


def build_slab_mesh(cfg: MeshConfig) -> HexMesh:
    if cfg.geometry != "slab":
        raise ConfigurationError("build_slab_mesh needs geometry='slab'")
    cfg.validate()
    nx, ny, nz = cfg.element_counts
    Lx, Ly, Lz = cfg.slab_extent
    x = np.linspace(0.0, Lx, nx + 1)
    y = np.linspace(0.0, Ly, ny + 1)
    z = np.linspace(0.0, Lz, nz + 1)
    Z, Y, X = np.meshgrid(z, y, x, indexing="ij")
    coords = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
    conn = structured_connectivity(nx, ny, nz)

    zc = (np.arange(nz) + 0.5) / nz
    alpha_layer = _rotation_angles(zc, cfg.fiber_rotation_total)
    alpha = np.repeat(alpha_layer, nx * ny)
    fibers = np.zeros((conn.shape[0], 3, 3))
    fibers[:, 0, 0] = np.cos(alpha)
    fibers[:, 0, 1] = np.sin(alpha)
    fibers[:, 1, 0] = -np.sin(alpha)
    fibers[:, 1, 1] = np.cos(alpha)
    fibers[:, 2, 2] = 1.0
    return HexMesh((nx, ny, nz), coords, conn, fibers, "slab", depth=coords[:, 2] / Lz)


def ellipsoid_map(cfg: MeshConfig, phi, theta, r):
    """Truncated-ellipsoid parametrisation; r = 0 endocardium, r = 1 epicardium."""
    a = cfg.a1 + r * (cfg.a2 - cfg.a1)
    b = cfg.b1 + r * (cfg.b2 - cfg.b1)
    c = cfg.c1 + r * (cfg.c2 - cfg.c1)
    return np.stack(
        [a * np.cos(theta) * np.cos(phi), b * np.cos(theta) * np.sin(phi), c * np.sin(theta)],
        axis=-1,
    )


def build_ellipsoid_mesh(cfg: MeshConfig) -> HexMesh:
    if cfg.geometry != "ellipsoid":
        raise ConfigurationError("build_ellipsoid_mesh needs geometry='ellipsoid'")
    cfg.validate()
    nx, ny, nz = cfg.element_counts
    phi = np.linspace(cfg.phi_min, cfg.phi_max, nx + 1)
    theta = np.linspace(cfg.theta_min, cfg.theta_max, ny + 1)
    r = np.linspace(0.0, 1.0, nz + 1)
    R, T, P = np.meshgrid(r, theta, phi, indexing="ij")
    coords = ellipsoid_map(cfg, P.ravel(), T.ravel(), R.ravel())
    conn = structured_connectivity(nx, ny, nz)

    # fiber frame from the parametric tangents at element centroids
    eijk = np.stack(
        [g.ravel() for g in np.meshgrid(np.arange(nz), np.arange(ny), np.arange(nx), indexing="ij")[::-1]],
        axis=1,
    )
    pc = cfg.phi_min + (eijk[:, 0] + 0.5) * (cfg.phi_max - cfg.phi_min) / nx
    tc = cfg.theta_min + (eijk[:, 1] + 0.5) * (cfg.theta_max - cfg.theta_min) / ny
    rc = (eijk[:, 2] + 0.5) / nz
    a = cfg.a1 + rc * (cfg.a2 - cfg.a1)
    b = cfg.b1 + rc * (cfg.b2 - cfg.b1)
    c = cfg.c1 + rc * (cfg.c2 - cfg.c1)
    d_phi = np.stack([-a * np.cos(tc) * np.sin(pc), b * np.cos(tc) * np.cos(pc), np.zeros_like(pc)], axis=1)
    d_theta = np.stack([-a * np.sin(tc) * np.cos(pc), -b * np.sin(tc) * np.sin(pc), c * np.cos(tc)], axis=1)
    e1 = d_phi / np.linalg.norm(d_phi, axis=1, keepdims=True)
    e2 = d_theta - np.sum(d_theta * e1, axis=1, keepdims=True) * e1
    e2 /= np.linalg.norm(e2, axis=1, keepdims=True)
    en = np.cross(e1, e2)
    # counterclockwise from epicardium (r=1) to endocardium (r=0)
    alpha = _rotation_angles(1.0 - rc, cfg.fiber_rotation_total)[:, None]
    al = np.cos(alpha) * e1 + np.sin(alpha) * e2
    at = -np.sin(alpha) * e1 + np.cos(alpha) * e2
    fibers = np.stack([al, at, en], axis=1)
    return HexMesh((nx, ny, nz), coords, conn, fibers, "ellipsoid", depth=R.ravel())


def build_mesh(cfg: MeshConfig) -> HexMesh:
    if cfg.geometry == "slab":
        return build_slab_mesh(cfg)
    if cfg.geometry == "ellipsoid":
        return build_ellipsoid_mesh(cfg)
    raise ConfigurationError(f"unknown geometry {cfg.geometry!r}")


# default conductivities in mS/cm, ordered (l, t, n)
INTRA_DEFAULT = (3.0e-3, 3.1525e-4, 3.1525e-5)
EXTRA_DEFAULT = (2.0e-3, 1.3514e-3, 6.757e-4)


@dataclass
class ConductivityTensors:
    intra: tuple[float, float, float] = INTRA_DEFAULT
    extra: tuple[float, float, float] = EXTRA_DEFAULT
    # subdomain index -> (intra, extra) triples; constant within the subdomain
    overrides: dict = field(default_factory=dict)

    def __post_init__(self):
        for triple in [self.intra, self.extra, *[x for pair in self.overrides.values() for x in pair]]:
            if len(triple) != 3 or min(triple) <= 0:
                raise ConfigurationError(f"conductivities must be three positive numbers, got {triple}")

    def coefficients(self, which: str, n_elements: int, element_subdomain=None) -> np.ndarray:
        """(E, 3) per-element (l, t, n) coefficients of the requested medium."""
        idx = _medium_index(which)
        sig = np.tile(np.asarray((self.intra, self.extra)[idx], dtype=float), (n_elements, 1))
        if self.overrides:
            if element_subdomain is None:
                raise ConfigurationError("per-subdomain overrides need an element -> subdomain map")
            for sub, pair in self.overrides.items():
                sig[element_subdomain == sub] = pair[idx]
        return sig

    def subdomain_max(self, which: str, n_subdomains: int) -> np.ndarray:
        """sigma_M per subdomain: the largest of (l, t, n)."""
        idx = _medium_index(which)
        out = np.full(n_subdomains, max((self.intra, self.extra)[idx]))
        for sub, pair in self.overrides.items():
            out[sub] = max(pair[idx])
        return out


def _medium_index(which: str) -> int:
    if which in ("intra", "i"):
        return 0
    if which in ("extra", "e"):
        return 1
    raise ValueError(f"medium must be 'intra' or 'extra', got {which!r}")


def conductivity_tensors(mesh: HexMesh, cond: ConductivityTensors, which: str, element_subdomain=None) -> np.ndarray:
    """(E, 3, 3) tensors sum_k sigma_k a_k a_k^T."""
    sig = cond.coefficients(which, mesh.num_elements, element_subdomain)
    return np.einsum("ek,eki,ekj->eij", sig, mesh.fibers, mesh.fibers)


def conductivity_tensor_at(mesh: HexMesh, cond: ConductivityTensors, element: int, which: str,
                           element_subdomain=None) -> np.ndarray:
    if not 0 <= element < mesh.num_elements:
        raise IndexError(f"element {element} out of range")
    idx = _medium_index(which)
    sig = np.asarray((cond.intra, cond.extra)[idx], dtype=float)
    if cond.overrides and element_subdomain is not None:
        sub = int(element_subdomain[element])
        if sub in cond.overrides:
            sig = np.asarray(cond.overrides[sub][idx], dtype=float)
    F = mesh.fibers[element]
    return (F.T * sig) @ F
