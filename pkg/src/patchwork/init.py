"""Model constructors.

Two families. ``geometric_init`` turns an oriented point cloud into a
model whose tropical limit interpolates the samples: every sample gets a
Plus term (tangent plane tilted by the normal) and a Minus term (the
untilted plane), so f(x_j) = 0 and the subgradient at x_j equals n_j.
The digital constructions color a lattice of lifted linear terms with an
inside/outside oracle; their tropical zero set is the polyline or
polygonal surface separating inside cells from outside cells.

An occupancy oracle is any deterministic callable mapping a d-point to
True (inside) or False (outside).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import EmptyInput, MemoryBudgetExceeded, NonUnitNormal, UnsupportedFormat
from .extract import chebyshev_center
from .field import MINUS, PLUS, PatchworkModel

DEFAULT_RHO = 200.0
DEFAULT_BETA = 75.0

# digital_surface_grid refuses lattices with more terms than this.
DEFAULT_MAX_TERMS = 2_000_000


@dataclass
class OrientedSampleSet:
    """Surface samples with outward unit normals.

    ``source`` records where the cloud came from (a mesh path or a
    synthetic shape name); it is carried into run manifests.
    """

    points: np.ndarray
    normals: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.points = np.atleast_2d(np.asarray(self.points, dtype=np.float64))
        self.normals = np.atleast_2d(np.asarray(self.normals, dtype=np.float64))
        self.validate()

    def __len__(self):
        return len(self.points)

    @property
    def dim(self):
        return self.points.shape[1]

    def validate(self):
        if len(self.points) == 0:
            raise EmptyInput("sample set is empty")
        if self.points.shape != self.normals.shape:
            raise NonUnitNormal(
                f"normals shape {self.normals.shape} != points shape {self.points.shape}"
            )
        norms = np.linalg.norm(self.normals, axis=1)
        worst = float(np.abs(norms - 1.0).max())
        if worst > 1e-6:
            raise NonUnitNormal(f"normals deviate from unit length by {worst:.3g}")
        if np.abs(self.points).max() > 1.0 + 1e-9:
            warnings.warn(
                "sample points fall outside [-1, 1]^d; fitting assumes "
                "normalized inputs", RuntimeWarning)


def geometric_init(samples: OrientedSampleSet, rho: float = DEFAULT_RHO,
                   beta: float = DEFAULT_BETA) -> PatchworkModel:
    """Closed-form model interpolating an oriented point cloud.

    Sample j contributes a Plus term a = rho*x_j + n_j,
    c = -rho*|x_j|^2/2 - <n_j, x_j> and a Minus term a = rho*x_j,
    c = -rho*|x_j|^2/2.  Both attain their group maximum at x_j (for
    sample spacing above ~2/rho), the tropical field vanishes there, and
    its subgradient is exactly n_j.  Weight normalization is enabled;
    all s start at 1.
    """
    if rho <= 0:
        raise ValueError(f"rho must be positive, got {rho}")
    x = samples.points
    n = samples.normals
    m = len(x)
    sq = 0.5 * rho * np.einsum("ij,ij->i", x, x)
    a_plus = rho * x + n
    c_plus = -sq - np.einsum("ij,ij->i", n, x)
    a_minus = rho * x
    c_minus = -sq
    a = np.concatenate([a_plus, a_minus], axis=0)
    c = np.concatenate([c_plus, c_minus])
    group = np.concatenate([np.full(m, PLUS, dtype=np.int8),
                            np.full(m, MINUS, dtype=np.int8)])
    return PatchworkModel.from_arrays(a, c, group, beta, beta, weightnorm=True)


def random_init(m: int, dim: int, seed: int, beta: float = DEFAULT_BETA) -> PatchworkModel:
    """Random baseline with the same term budget as geometric_init.

    Used by the initialization ablation: directions are standard normal
    scaled by 1/sqrt(d), offsets uniform in [-0.5, 0.5], groups split
    half and half.
    """
    rng = np.random.default_rng(seed)
    a = rng.normal(size=(2 * m, dim)) / np.sqrt(dim)
    c = rng.uniform(-0.5, 0.5, size=2 * m)
    group = np.concatenate([np.full(m, PLUS, dtype=np.int8),
                            np.full(m, MINUS, dtype=np.int8)])
    return PatchworkModel.from_arrays(a, c, group, beta, beta, weightnorm=True)


# ---------------------------------------------------------------------------
# digital constructions

def _classify(oracle, centers):
    inside = np.fromiter((bool(oracle(p)) for p in centers), dtype=bool,
                         count=len(centers))
    return np.where(inside, MINUS, PLUS).astype(np.int8)


def digital_curve_grid(N: int, oracle, beta: float = DEFAULT_BETA) -> PatchworkModel:
    """Square-lattice digital curve.

    One term per (k, l) in [-N, N]^2 with a = (k, l) and
    c = (1 - k^2 - l^2) / (2N).  Term (k, l) dominates exactly on the
    grid cell of side 1/N centered at (k/N, l/N); the oracle at that
    center picks its group (inside goes to Minus).  The (0, 0) term is
    the positive constant 1/(2N).
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    ks = np.arange(-N, N + 1)
    K, L = np.meshgrid(ks, ks, indexing="ij")
    K = K.ravel()
    L = L.ravel()
    a = np.stack([K, L], axis=1).astype(np.float64)
    c = (1.0 - K**2 - L**2) / (2.0 * N)
    centers = a / N
    return PatchworkModel.from_arrays(a, c, _classify(oracle, centers), beta, beta)


def hex_cell_halfspaces(N: int) -> np.ndarray:
    """The six halfspaces (u | d) of the lattice hexagon around the origin."""
    h = 1.0 / N
    return np.array([
        [1.0, 0.0, -h],
        [-1.0, 0.0, -h],
        [0.0, 1.0, -h],
        [0.0, -1.0, -h],
        [1.0, -1.0, -h],
        [-1.0, 1.0, -h],
    ])


def digital_curve_hex(N: int, oracle, beta: float = DEFAULT_BETA) -> PatchworkModel:
    """Hex-lattice digital curve.

    Same directions a = (k, l) as the square grid but lifted by
    c = -(k^2 + l^2 + kl - 1) / N, which makes the candidate polygons an
    affine honeycomb: hexagons with sides parallel to x=0, y=0 and x=y,
    centered at ((2k+l)/N, (k+2l)/N).  The oracle is queried at each
    hexagon's Chebyshev center.  That center is not unique for this cell
    shape (the optimum slides along the x=y diagonal), so the LP's
    lexicographic tie-break decides it, deterministically; all cells are
    translates, so one LP serves the whole lattice.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    lp = chebyshev_center(hex_cell_halfspaces(N))
    offset = lp.x

    ks = np.arange(-N, N + 1)
    K, L = np.meshgrid(ks, ks, indexing="ij")
    K = K.ravel()
    L = L.ravel()
    a = np.stack([K, L], axis=1).astype(np.float64)
    c = -(K**2 + L**2 + K * L - 1.0) / N
    centers = np.stack([(2 * K + L) / N, (K + 2 * L) / N], axis=1) + offset
    return PatchworkModel.from_arrays(a, c, _classify(oracle, centers), beta, beta)


def digital_surface_grid(N: int, oracle, beta: float = DEFAULT_BETA,
                         max_terms: int = DEFAULT_MAX_TERMS) -> PatchworkModel:
    """Cubic-lattice digital surface.

    One term per (k, l, m) in [-N, N]^3 with a = (k, l, m) and
    c = (1 - k^2 - l^2 - m^2) / (2N); groups from the oracle at the cell
    centers (k, l, m)/N.
    """
    if N < 1:
        raise ValueError(f"N must be >= 1, got {N}")
    count = (2 * N + 1) ** 3
    if count > max_terms:
        raise MemoryBudgetExceeded(
            f"lattice of {count} terms exceeds the cap of {max_terms}"
        )
    ks = np.arange(-N, N + 1)
    K, L, M = np.meshgrid(ks, ks, ks, indexing="ij")
    K = K.ravel()
    L = L.ravel()
    M = M.ravel()
    a = np.stack([K, L, M], axis=1).astype(np.float64)
    c = (1.0 - K**2 - L**2 - M**2) / (2.0 * N)
    centers = a / N
    return PatchworkModel.from_arrays(a, c, _classify(oracle, centers), beta, beta)


# ---------------------------------------------------------------------------
# occupancy oracles

def oracle_circle(r: float):
    """Inside the origin-centered circle of radius r (2D)."""
    def inside(p):
        return float(p[0]) ** 2 + float(p[1]) ** 2 <= r * r
    return inside


def oracle_square(a: float):
    """Inside the axis-aligned square of half-side a (2D)."""
    def inside(p):
        return max(abs(float(p[0])), abs(float(p[1]))) <= a
    return inside


def oracle_sphere(r: float):
    """Inside the origin-centered sphere of radius r (3D)."""
    def inside(p):
        return float(p[0]) ** 2 + float(p[1]) ** 2 + float(p[2]) ** 2 <= r * r
    return inside


def oracle_torus(R: float, r: float):
    """Inside the z-axis torus with ring radius R and tube radius r."""
    def inside(p):
        q = (float(p[0]) ** 2 + float(p[1]) ** 2) ** 0.5 - R
        return q * q + float(p[2]) ** 2 <= r * r
    return inside


def oracle_mesh_winding(mesh):
    """Inside test via the generalized winding number of a triangle mesh.

    Sums the signed solid angles of all triangles; a total above 2*pi
    (winding number 1/2) counts as inside.  Robust to small holes and
    self-intersections, which is why scans go through this rather than
    ray casting.
    """
    tri = mesh.vertices[mesh.triangles]

    def inside(p):
        a = tri[:, 0] - p
        b = tri[:, 1] - p
        c = tri[:, 2] - p
        la = np.linalg.norm(a, axis=1)
        lb = np.linalg.norm(b, axis=1)
        lc = np.linalg.norm(c, axis=1)
        num = np.einsum("ij,ij->i", a, np.cross(b, c))
        den = (
            la * lb * lc
            + np.einsum("ij,ij->i", a, b) * lc
            + np.einsum("ij,ij->i", b, c) * la
            + np.einsum("ij,ij->i", c, a) * lb
        )
        omega = 2.0 * np.arctan2(num, den)
        return float(omega.sum()) >= 2.0 * np.pi

    return inside


def make_oracle(name: str, **params):
    """Oracle factory for the CLI: circle(r), square(a), sphere(r),
    torus(R, r), mesh (pass mesh=...), none (nothing inside)."""
    builders = {
        "circle": lambda: oracle_circle(params.get("r", 0.5)),
        "square": lambda: oracle_square(params.get("a", 0.5)),
        "sphere": lambda: oracle_sphere(params.get("r", 0.5)),
        "torus": lambda: oracle_torus(params.get("R", 0.6), params.get("r", 0.3)),
        "mesh": lambda: oracle_mesh_winding(params["mesh"]),
        "none": lambda: (lambda p: False),
    }
    if name not in builders:
        raise UnsupportedFormat(
            f"unknown oracle {name!r}; choose from {sorted(builders)}"
        )
    return builders[name]()


# ---------------------------------------------------------------------------
# synthetic oriented samples

def fibonacci_sphere(m: int, radius: float = 1.0) -> np.ndarray:
    """Near-uniform deterministic sphere points (golden-angle spiral)."""
    i = np.arange(m, dtype=np.float64)
    z = 1.0 - (2.0 * i + 1.0) / m
    phi = i * (np.pi * (3.0 - np.sqrt(5.0)))
    s = np.sqrt(np.maximum(0.0, 1.0 - z * z))
    return radius * np.stack([s * np.cos(phi), s * np.sin(phi), z], axis=1)


def sphere_samples(m: int, radius: float = 1.0) -> OrientedSampleSet:
    pts = fibonacci_sphere(m, radius)
    return OrientedSampleSet(pts, pts / radius, source=f"sphere(r={radius})")


def sphere_samples_random(m: int, radius: float = 1.0,
                          seed: int = 0) -> OrientedSampleSet:
    """Area-uniform random sphere samples, the way a scan would land.

    Prefer this over the spiral for fitting: the spiral's perfectly even
    spacing gives the term competition no density contrast to feed on.
    """
    rng = np.random.default_rng(seed)
    u = rng.normal(size=(m, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return OrientedSampleSet(u * radius, u.copy(),
                             source=f"sphere-rand(r={radius})")


def circle_samples(m: int, radius: float = 1.0) -> OrientedSampleSet:
    th = 2.0 * np.pi * np.arange(m) / m
    n = np.stack([np.cos(th), np.sin(th)], axis=1)
    return OrientedSampleSet(radius * n, n, source=f"circle(r={radius})")


def cube_samples(m: int, half: float = 1.0, seed: int = 0) -> OrientedSampleSet:
    """Uniform samples on the surface of the cube [-half, half]^3."""
    rng = np.random.default_rng(seed)
    face = np.arange(m) % 6
    rng.shuffle(face)
    uv = rng.uniform(-half, half, size=(m, 2))
    pts = np.empty((m, 3))
    nrm = np.zeros((m, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    for k in range(3):
        sel = axis == k
        others = [j for j in range(3) if j != k]
        pts[sel, k] = sign[sel] * half
        pts[np.ix_(sel, others)] = uv[sel]
        nrm[sel, k] = sign[sel]
    return OrientedSampleSet(pts, nrm, source=f"cube(a={half})")


def square_samples(m: int, half: float = 1.0, seed: int = 0) -> OrientedSampleSet:
    """Uniform samples on the boundary of the square [-half, half]^2."""
    rng = np.random.default_rng(seed)
    side = np.arange(m) % 4
    rng.shuffle(side)
    u = rng.uniform(-half, half, size=m)
    pts = np.empty((m, 2))
    nrm = np.zeros((m, 2))
    axis = side // 2
    sign = np.where(side % 2 == 0, 1.0, -1.0)
    for k in range(2):
        sel = axis == k
        pts[sel, k] = sign[sel] * half
        pts[sel, 1 - k] = u[sel]
        nrm[sel, k] = sign[sel]
    return OrientedSampleSet(pts, nrm, source=f"square(a={half})")


def torus_samples(m: int, R: float = 0.6, r: float = 0.3,
                  seed: int = 0) -> OrientedSampleSet:
    """Area-uniform samples on a z-axis torus (rejection in the tube angle)."""
    rng = np.random.default_rng(seed)
    u = np.empty(0)
    v = np.empty(0)
    while len(u) < m:
        cand_u = rng.uniform(0.0, 2.0 * np.pi, size=2 * m)
        cand_v = rng.uniform(0.0, 2.0 * np.pi, size=2 * m)
        accept = rng.uniform(0.0, 1.0, size=2 * m) <= (R + r * np.cos(cand_v)) / (R + r)
        u = np.concatenate([u, cand_u[accept]])
        v = np.concatenate([v, cand_v[accept]])
    u, v = u[:m], v[:m]
    cu, su, cv, sv = np.cos(u), np.sin(u), np.cos(v), np.sin(v)
    pts = np.stack([(R + r * cv) * cu, (R + r * cv) * su, r * sv], axis=1)
    nrm = np.stack([cv * cu, cv * su, sv], axis=1)
    return OrientedSampleSet(pts, nrm, source=f"torus(R={R},r={r})")
