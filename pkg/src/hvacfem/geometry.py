"""Domain geometry: rectilinear floor plans, structured triangulation with
region tagging, door-driven material coefficients and sensor bump sampling.

Floor plans are rectilinear (axis-parallel walls). The mesher snaps grid
lines to every polygon coordinate, so door/fan/target/wall regions are
resolved as unions of whole triangles and their indicator functions are
exact per element.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContainmentError, DomainError, GeometryError
from .quadrature import NQ, TRI_POINTS, TRI_WEIGHTS, physical_points

EXTERIOR_WALL = 1  # boundary edge marker


# ---------------------------------------------------------------------------
# polygon utilities
# ---------------------------------------------------------------------------

def polygon_area(poly):
    """Signed shoelace area of a closed polygon given as (n, 2) vertices."""
    p = np.asarray(poly, dtype=float)
    x, y = p[:, 0], p[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def is_rectilinear(poly):
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    dx = np.abs(q[:, 0] - p[:, 0])
    dy = np.abs(q[:, 1] - p[:, 1])
    return bool(np.all((dx < 1e-12) ^ (dy < 1e-12)))


def _segments(poly):
    p = np.asarray(poly, dtype=float)
    return list(zip(p, np.roll(p, -1, axis=0)))


def _cross2(a, b):
    return a[0] * b[1] - a[1] * b[0]


def _seg_intersect(a0, a1, b0, b1):
    """Proper or touching intersection of two closed segments."""
    d1 = _cross2(a1 - a0, b0 - a0)
    d2 = _cross2(a1 - a0, b1 - a0)
    d3 = _cross2(b1 - b0, a0 - b0)
    d4 = _cross2(b1 - b0, a1 - b0)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)):
        return True

    def on_seg(p, q, r):
        return (
            abs(_cross2(q - p, r - p)) < 1e-12
            and min(p[0], q[0]) - 1e-12 <= r[0] <= max(p[0], q[0]) + 1e-12
            and min(p[1], q[1]) - 1e-12 <= r[1] <= max(p[1], q[1]) + 1e-12
        )

    return any(on_seg(a0, a1, r) for r in (b0, b1)) or any(
        on_seg(b0, b1, r) for r in (a0, a1)
    )


def check_simple_polygon(poly, name="polygon"):
    """Raise GeometryError unless poly is a simple rectilinear polygon."""
    p = np.asarray(poly, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2 or p.shape[0] < 4:
        raise GeometryError(f"{name}: need at least 4 vertices, got shape {p.shape}")
    if not is_rectilinear(p):
        raise GeometryError(f"{name}: only rectilinear (axis-parallel) polygons are supported")
    edges = _segments(p)
    n = len(edges)
    for i in range(n):
        for j in range(i + 1, n):
            if j == i + 1 or (i == 0 and j == n - 1):
                continue  # adjacent edges share a vertex by construction
            if _seg_intersect(edges[i][0], edges[i][1], edges[j][0], edges[j][1]):
                raise GeometryError(f"{name}: self-intersecting (edges {i} and {j})")
    if abs(polygon_area(p)) < 1e-14:
        raise GeometryError(f"{name}: degenerate (zero area)")


def point_in_polygon(point, poly):
    """Even-odd ray casting; points on the boundary count as inside."""
    x, y = float(point[0]), float(point[1])
    p = np.asarray(poly, dtype=float)
    q = np.roll(p, -1, axis=0)
    inside = False
    for (x0, y0), (x1, y1) in zip(p, q):
        # boundary check
        if (
            abs((x1 - x0) * (y - y0) - (y1 - y0) * (x - x0)) < 1e-12
            and min(x0, x1) - 1e-12 <= x <= max(x0, x1) + 1e-12
            and min(y0, y1) - 1e-12 <= y <= max(y0, y1) + 1e-12
        ):
            return True
        if (y0 > y) != (y1 > y):
            xi = x0 + (y - y0) / (y1 - y0) * (x1 - x0)
            if xi > x:
                inside = not inside
    return inside


def rect(x0, y0, x1, y1):
    """Axis-aligned rectangle polygon, counterclockwise."""
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


# ---------------------------------------------------------------------------
# region specification
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FanRegion:
    polygon: np.ndarray
    direction: np.ndarray  # unit force direction

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=float)
        n = np.linalg.norm(d)
        if n < 1e-14:
            raise GeometryError("fan direction must be nonzero")
        object.__setattr__(self, "direction", d / n)
        object.__setattr__(self, "polygon", np.asarray(self.polygon, dtype=float))


@dataclass(frozen=True, eq=False)
class RegionSpec:
    """Doors, fans, sensors, comfort target and (solid) interior walls.

    Interior walls are permanently closed material regions; doors carry the
    relaxed open/closed parameter. Every polygon must be rectilinear and lie
    inside the floor plan.
    """

    door_regions: tuple = ()
    fan_regions: tuple = ()
    sensor_points: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    sensor_radius: float = 1.0
    target_region: np.ndarray | None = None
    wall_regions: tuple = ()

    def __post_init__(self):
        object.__setattr__(
            self, "door_regions", tuple(np.asarray(p, dtype=float) for p in self.door_regions)
        )
        object.__setattr__(
            self, "wall_regions", tuple(np.asarray(p, dtype=float) for p in self.wall_regions)
        )
        fans = tuple(
            f if isinstance(f, FanRegion) else FanRegion(*f) for f in self.fan_regions
        )
        object.__setattr__(self, "fan_regions", fans)
        object.__setattr__(
            self, "sensor_points", np.asarray(self.sensor_points, dtype=float).reshape(-1, 2)
        )
        if self.target_region is not None:
            object.__setattr__(self, "target_region", np.asarray(self.target_region, dtype=float))
        if self.sensor_radius <= 0:
            raise GeometryError("sensor radius must be positive")

    @property
    def n_doors(self):
        return len(self.door_regions)

    @property
    def n_fans(self):
        return len(self.fan_regions)

    @property
    def n_sensors(self):
        return self.sensor_points.shape[0]

    def named_polygons(self):
        out = [(f"door{i}", p) for i, p in enumerate(self.door_regions)]
        out += [(f"fan{i}", f.polygon) for i, f in enumerate(self.fan_regions)]
        out += [(f"wall{i}", p) for i, p in enumerate(self.wall_regions)]
        if self.target_region is not None:
            out.append(("target", self.target_region))
        return out


# ---------------------------------------------------------------------------
# mesh
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class Mesh:
    """Conforming triangulation with per-triangle region tags.

    vertices: (nv, 2); triangles: (nt, 3) CCW; boundary_edges: (nb, 3) as
    (i, j, marker); region_tags: one frozenset of region ids per triangle.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    region_tags: tuple
    h_max: float

    def __post_init__(self):
        for name in ("vertices", "triangles", "boundary_edges"):
            arr = getattr(self, name)
            arr.setflags(write=False)

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    def coords(self):
        """(nt, 3, 2) per-element vertex coordinates."""
        return self.vertices[self.triangles]

    def areas(self):
        c = self.coords()
        return 0.5 * (
            (c[:, 1, 0] - c[:, 0, 0]) * (c[:, 2, 1] - c[:, 0, 1])
            - (c[:, 2, 0] - c[:, 0, 0]) * (c[:, 1, 1] - c[:, 0, 1])
        )

    def grad_bary(self):
        """(nt, 3, 2) gradients of the barycentric coordinates."""
        c = self.coords()
        a = self.areas()
        g = np.empty((self.n_triangles, 3, 2))
        for i in range(3):
            j, k = (i + 1) % 3, (i + 2) % 3
            g[:, i, 0] = c[:, j, 1] - c[:, k, 1]
            g[:, i, 1] = c[:, k, 0] - c[:, j, 0]
        return g / (2.0 * a)[:, None, None]

    def triangles_in(self, region_id):
        """Sorted indices of triangles tagged with region_id."""
        return np.array(
            [t for t, tags in enumerate(self.region_tags) if region_id in tags], dtype=int
        )

    def indicator(self, region_id):
        """Per-element 0/1 indicator of a region."""
        ind = np.zeros(self.n_triangles)
        ind[self.triangles_in(region_id)] = 1.0
        return ind

    def domain_area(self):
        return float(np.sum(self.areas()))


def validate_mesh(mesh):
    """Check the Mesh invariants; raise GeometryError on violation."""
    areas = mesh.areas()
    if np.any(areas <= 0):
        raise GeometryError("non-positive triangle area")
    tri = mesh.triangles
    edges = np.vstack([tri[:, [0, 1]], tri[:, [1, 2]], tri[:, [2, 0]]])
    key = np.sort(edges, axis=1)
    _, counts = np.unique(key, axis=0, return_counts=True)
    if np.any(counts > 2):
        raise GeometryError("non-conforming: edge shared by more than 2 triangles")
    n_boundary = int(np.sum(counts == 1))
    if n_boundary != mesh.boundary_edges.shape[0]:
        raise GeometryError("boundary edge list does not match once-counted edges")
    # oriented boundary edges must close into loops: in-degree = out-degree = 1
    be = mesh.boundary_edges
    starts, s_counts = np.unique(be[:, 0], return_counts=True)
    ends, e_counts = np.unique(be[:, 1], return_counts=True)
    if np.any(s_counts != 1) or np.any(e_counts != 1) or not np.array_equal(
        np.sort(starts), np.sort(ends)
    ):
        raise GeometryError("boundary edges do not form closed loops")


# ---------------------------------------------------------------------------
# structured rectilinear mesher
# ---------------------------------------------------------------------------

def _snap_coords(values, target_h):
    """Subdivide the gaps between snap lines into ~target_h pieces."""
    base = np.unique(np.round(np.asarray(values, dtype=float), 12))
    out = []
    for a, b in zip(base[:-1], base[1:]):
        n = max(1, int(np.ceil((b - a) / target_h - 1e-12)))
        out.append(np.linspace(a, b, n + 1)[:-1])
    out.append(base[-1:])
    return np.concatenate(out)


def build_mesh(outer, regions, target_h):
    """Triangulate a rectilinear floor plan.

    Grid lines snap to every polygon coordinate of the plan, each grid cell
    inside the domain is split into two triangles, and triangles are tagged
    with the regions containing them (decided at centroids, which is exact
    because region boundaries coincide with grid lines).
    """
    if target_h <= 0:
        raise GeometryError("target_h must be positive")
    outer = np.asarray(outer, dtype=float)
    check_simple_polygon(outer, "outer boundary")
    named = regions.named_polygons()
    for name, poly in named:
        check_simple_polygon(poly, name)

    xs = [outer[:, 0]] + [p[:, 0] for _, p in named]
    ys = [outer[:, 1]] + [p[:, 1] for _, p in named]
    gx = _snap_coords(np.concatenate(xs), target_h)
    gy = _snap_coords(np.concatenate(ys), target_h)

    nx, ny = len(gx), len(gy)
    vid = -np.ones((nx, ny), dtype=int)

    cx = 0.5 * (gx[:-1] + gx[1:])
    cy = 0.5 * (gy[:-1] + gy[1:])
    keep = np.zeros((nx - 1, ny - 1), dtype=bool)
    for i in range(nx - 1):
        for j in range(ny - 1):
            keep[i, j] = point_in_polygon((cx[i], cy[j]), outer)
    if not keep.any():
        raise GeometryError("no grid cell lies inside the outer boundary")

    tris = []
    centroids = []
    for i in range(nx - 1):
        for j in range(ny - 1):
            if not keep[i, j]:
                continue
            for (a, b) in ((i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)):
                if vid[a, b] < 0:
                    vid[a, b] = 0  # mark used
            tris.append(((i, j), (i + 1, j), (i + 1, j + 1)))
            tris.append(((i, j), (i + 1, j + 1), (i, j + 1)))

    # compact vertex numbering, row-major over (i, j)
    used = np.argwhere(vid >= 0)
    for k, (a, b) in enumerate(used):
        vid[a, b] = k
    vertices = np.column_stack([gx[used[:, 0]], gy[used[:, 1]]])
    triangles = np.array([[vid[a] for a in t] for t in tris], dtype=int)

    verts_tri = vertices[triangles]
    centroids = verts_tri.mean(axis=1)

    tags = [set() for _ in range(len(triangles))]
    for name, poly in named:
        hit = np.array([point_in_polygon(c, poly) for c in centroids])
        want = abs(polygon_area(poly))
        got = float(np.sum(_tri_areas(verts_tri)[hit]))
        if abs(got - want) > 1e-9 * max(1.0, want):
            raise ContainmentError(
                f"region {name}: tagged area {got:.12g} != polygon area {want:.12g}; "
                "region not inside the domain or misaligned"
            )
        for t in np.nonzero(hit)[0]:
            tags[t].add(name)

    for t, tg in enumerate(tags):
        doors = [g for g in tg if g.startswith("door")]
        if len(doors) > 1:
            raise GeometryError(f"door regions overlap in triangle {t}: {sorted(doors)}")

    for k, p in enumerate(regions.sensor_points):
        if not point_in_polygon(p, outer):
            raise ContainmentError(f"sensor {k} at {tuple(p)} lies outside the domain")

    # oriented boundary edges: those appearing exactly once across triangles
    edges = np.vstack(
        [triangles[:, [0, 1]], triangles[:, [1, 2]], triangles[:, [2, 0]]]
    )
    key = np.sort(edges, axis=1)
    _, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
    bnd = edges[counts[inv] == 1]
    boundary_edges = np.column_stack(
        [bnd, np.full(len(bnd), EXTERIOR_WALL, dtype=int)]
    )

    lengths = np.linalg.norm(
        verts_tri - np.roll(verts_tri, -1, axis=1), axis=2
    )
    h_max = float(lengths.max())

    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=boundary_edges,
        region_tags=tuple(frozenset(t) for t in tags),
        h_max=h_max,
    )
    validate_mesh(mesh)
    return mesh


def _tri_areas(verts_tri):
    return 0.5 * (
        (verts_tri[:, 1, 0] - verts_tri[:, 0, 0]) * (verts_tri[:, 2, 1] - verts_tri[:, 0, 1])
        - (verts_tri[:, 2, 0] - verts_tri[:, 0, 0]) * (verts_tri[:, 1, 1] - verts_tri[:, 0, 1])
    )


# ---------------------------------------------------------------------------
# per-element material coefficients
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ElementField:
    """Piecewise-constant field, one value per triangle."""

    mesh: Mesh
    values: np.ndarray

    def __post_init__(self):
        v = np.ascontiguousarray(np.asarray(self.values, dtype=float))
        if v.shape != (self.mesh.n_triangles,):
            raise DomainError("ElementField values must have one entry per triangle")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


def material_fields(mesh, regions, theta, kappa0, kappa_w, alpha_w):
    """Friction and diffusivity fields, affine in the door parameters.

    alpha = alpha_w * sum_i (1-theta_i) 1{door_i}  (+ walls, always solid)
    kappa = kappa0 + (kappa_w-kappa0) * sum_i (1-theta_i) 1{door_i} (+ walls)
    """
    theta = np.asarray(theta, dtype=float).reshape(-1)
    if theta.shape[0] != regions.n_doors:
        raise DomainError(
            f"theta has {theta.shape[0]} entries for {regions.n_doors} doors"
        )
    if np.any(theta < -1e-12) or np.any(theta > 1.0 + 1e-12):
        raise DomainError("theta components must lie in [0, 1]")
    if kappa0 <= 0 or kappa_w <= 0 or alpha_w <= 0:
        raise DomainError("kappa0, kappa_w, alpha_w must be positive")

    closed = np.zeros(mesh.n_triangles)
    for i in range(regions.n_doors):
        closed += (1.0 - theta[i]) * mesh.indicator(f"door{i}")
    for i in range(len(regions.wall_regions)):
        closed += mesh.indicator(f"wall{i}")

    alpha = ElementField(mesh, alpha_w * closed)
    kappa = ElementField(mesh, kappa0 + (kappa_w - kappa0) * closed)
    return alpha, kappa


def material_theta_derivative(mesh, regions, door_index, kappa0, kappa_w, alpha_w):
    """d alpha / d theta_i and d kappa / d theta_i (per-element values)."""
    ind = mesh.indicator(f"door{door_index}")
    return -alpha_w * ind, -(kappa_w - kappa0) * ind


# ---------------------------------------------------------------------------
# sensor bumps
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SensorBump:
    """Compactly supported mollifier Phi(x) = sigma*exp(-1/(r^2-|x-c|^2)).

    sigma is chosen so the discrete quadrature integral over the mesh is
    exactly 1; sampling a constant field then returns that constant.
    """

    center: np.ndarray
    radius: float
    sigma: float

    def raw_values(self, points):
        """exp(-1/(r^2-d^2)) without normalization; 0 outside the disk."""
        d2 = np.sum((points - np.asarray(self.center)) ** 2, axis=-1)
        gap = self.radius**2 - d2
        out = np.zeros_like(gap)
        pos = gap > 0
        out[pos] = np.exp(-1.0 / gap[pos])
        return out

    def values(self, points):
        return self.sigma * self.raw_values(points)


def normalize_bump(mesh, center, radius):
    """Build a SensorBump whose discrete integral over the mesh equals 1."""
    if radius <= 0:
        raise GeometryError("sensor radius must be positive")
    probe = SensorBump(np.asarray(center, dtype=float), float(radius), 1.0)
    pts = physical_points(mesh.coords())
    raw = probe.raw_values(pts.reshape(-1, 2)).reshape(mesh.n_triangles, NQ)
    total = float(np.einsum("t,q,tq->", mesh.areas(), TRI_WEIGHTS, raw))
    if total <= 0:
        raise ContainmentError(
            "sensor disk does not intersect the mesh with positive area"
        )
    return SensorBump(np.asarray(center, dtype=float), float(radius), 1.0 / total)


def sample_sensor(fld, bump):
    """Integral of Phi * field over the mesh (element quadrature).

    fld is a P1 nodal field (anything with .space.mesh and .coeffs).
    """
    mesh = fld.space.mesh
    pts = physical_points(mesh.coords())
    phi = bump.values(pts.reshape(-1, 2)).reshape(mesh.n_triangles, NQ)
    t_elem = fld.coeffs[mesh.triangles]  # (nt, 3)
    t_q = np.einsum("qi,ti->tq", TRI_POINTS, t_elem)
    return float(np.einsum("t,q,tq,tq->", mesh.areas(), TRI_WEIGHTS, phi, t_q))


# ---------------------------------------------------------------------------
# mesh text format (MESH2D v1)
# ---------------------------------------------------------------------------

def save_mesh(mesh, path):
    with open(path, "w") as f:
        f.write("MESH2D v1\n")
        f.write(f"V {mesh.n_vertices}\n")
        for x, y in mesh.vertices:
            f.write(f"{x:.17g} {y:.17g}\n")
        f.write(f"T {mesh.n_triangles}\n")
        for t in range(mesh.n_triangles):
            i, j, k = mesh.triangles[t]
            tags = " ".join(sorted(mesh.region_tags[t]))
            f.write(f"{i} {j} {k}{' ' + tags if tags else ''}\n")
        f.write(f"B {mesh.boundary_edges.shape[0]}\n")
        for i, j, m in mesh.boundary_edges:
            f.write(f"{i} {j} {m}\n")


def load_mesh(path):
    with open(path) as f:
        lines = [ln.rstrip("\n") for ln in f]
    if not lines or lines[0].strip() != "MESH2D v1":
        raise GeometryError(f"{path}: missing 'MESH2D v1' header")
    pos = 1

    def expect_count(tag):
        nonlocal pos
        parts = lines[pos].split()
        if len(parts) != 2 or parts[0] != tag:
            raise GeometryError(f"{path}:{pos + 1}: expected '{tag} <count>'")
        pos += 1
        return int(parts[1])

    nv = expect_count("V")
    vertices = np.array(
        [[float(v) for v in lines[pos + i].split()] for i in range(nv)]
    )
    pos += nv
    nt = expect_count("T")
    triangles = np.empty((nt, 3), dtype=int)
    tags = []
    for i in range(nt):
        parts = lines[pos + i].split()
        triangles[i] = [int(p) for p in parts[:3]]
        tags.append(frozenset(parts[3:]))
    pos += nt
    nb = expect_count("B")
    boundary = np.array(
        [[int(v) for v in lines[pos + i].split()] for i in range(nb)], dtype=int
    )
    verts_tri = vertices[triangles]
    lengths = np.linalg.norm(verts_tri - np.roll(verts_tri, -1, axis=1), axis=2)
    mesh = Mesh(
        vertices=vertices,
        triangles=triangles,
        boundary_edges=boundary.reshape(nb, 3),
        region_tags=tuple(tags),
        h_max=float(lengths.max()),
    )
    validate_mesh(mesh)
    return mesh


# ---------------------------------------------------------------------------
# point location (field transfer between meshes, probes)
# ---------------------------------------------------------------------------

class PointLocator:
    """Bin-accelerated point-to-triangle lookup with barycentric output."""

    def __init__(self, mesh, nbins=None):
        self.mesh = mesh
        self.coords = mesh.coords()
        lo = mesh.vertices.min(axis=0)
        hi = mesh.vertices.max(axis=0)
        self.lo, self.hi = lo, hi
        if nbins is None:
            nbins = max(1, int(np.sqrt(mesh.n_triangles / 2)))
        self.nbins = nbins
        self.size = np.maximum(hi - lo, 1e-12) / nbins
        self.bins = {}
        for t in range(mesh.n_triangles):
            bmin = np.floor((self.coords[t].min(axis=0) - lo) / self.size).astype(int)
            bmax = np.floor((self.coords[t].max(axis=0) - lo) / self.size).astype(int)
            for bi in range(max(bmin[0], 0), min(bmax[0], nbins - 1) + 1):
                for bj in range(max(bmin[1], 0), min(bmax[1], nbins - 1) + 1):
                    self.bins.setdefault((bi, bj), []).append(t)

    def locate(self, points, tol=1e-10):
        """Containing triangle and barycentric coordinates of each point."""
        points = np.asarray(points, dtype=float).reshape(-1, 2)
        tri_idx = np.empty(len(points), dtype=int)
        bary = np.empty((len(points), 3))
        for n, p in enumerate(points):
            b = np.clip(
                np.floor((p - self.lo) / self.size).astype(int), 0, self.nbins - 1
            )
            found = False
            for t in self.bins.get((b[0], b[1]), ()):
                lam = self._bary(t, p)
                if np.all(lam >= -tol):
                    tri_idx[n], bary[n] = t, np.clip(lam, 0.0, 1.0)
                    found = True
                    break
            if not found:  # fallback: global best match
                best_t, best_lam, best_min = -1, None, -np.inf
                for t in range(self.mesh.n_triangles):
                    lam = self._bary(t, p)
                    m = lam.min()
                    if m > best_min:
                        best_t, best_lam, best_min = t, lam, m
                if best_min < -1e-6:
                    raise GeometryError(f"point {tuple(p)} lies outside the mesh")
                tri_idx[n], bary[n] = best_t, np.clip(best_lam, 0.0, 1.0)
        return tri_idx, bary

    def _bary(self, t, p):
        c = self.coords[t]
        m = np.array(
            [[c[1, 0] - c[0, 0], c[2, 0] - c[0, 0]], [c[1, 1] - c[0, 1], c[2, 1] - c[0, 1]]]
        )
        r = np.linalg.solve(m, p - c[0])
        return np.array([1.0 - r[0] - r[1], r[0], r[1]])
