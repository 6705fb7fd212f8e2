import numpy as np
import pytest

from hvacfem import fem
from hvacfem.errors import ContainmentError, DomainError, GeometryError
from hvacfem.geometry import (
    PointLocator,
    RegionSpec,
    build_mesh,
    load_mesh,
    material_fields,
    normalize_bump,
    point_in_polygon,
    polygon_area,
    rect,
    sample_sensor,
    save_mesh,
    validate_mesh,
)

L_SHAPE = np.array([[0, 0], [2, 0], [2, 1], [1, 1], [1, 2], [0, 2]], dtype=float)


def test_unit_square_minimal(unit_square_mesh):
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.5)
    assert mesh.n_triangles >= 8
    validate_mesh(mesh)
    assert mesh.h_max <= 1.5 * 0.5
    assert mesh.domain_area() == pytest.approx(1.0, abs=1e-12)


def test_apartment_element_count():
    # 7.6 x 16.8 m rectangle meshed near the reference resolution
    mesh = build_mesh(rect(0, 0, 7.6, 16.8), RegionSpec(), 0.2)
    assert abs(mesh.n_triangles - 6276) / 6276 < 0.05
    validate_mesh(mesh)


def test_l_shape_door_area_exact():
    regions = RegionSpec(door_regions=[rect(0.4, 0.9, 0.8, 1.1)])
    mesh = build_mesh(L_SHAPE, regions, 0.25)
    door = mesh.triangles_in("door0")
    assert door.size > 0
    area = float(np.sum(mesh.areas()[door]))
    assert area == pytest.approx(abs(polygon_area(rect(0.4, 0.9, 0.8, 1.1))), abs=1e-9)


def test_mesh_conforming_and_boundary_closed(two_door_mesh):
    validate_mesh(two_door_mesh)
    assert np.all(two_door_mesh.areas() > 0)


def test_self_intersecting_polygon_rejected():
    bowtie = np.array([[0, 0], [1, 1], [1, 0], [0, 1]], dtype=float)
    with pytest.raises(GeometryError):
        build_mesh(bowtie, RegionSpec(), 0.25)


def test_non_rectilinear_rejected():
    tri = np.array([[0, 0], [1, 0], [1, 1], [0.5, 1.5]], dtype=float)
    with pytest.raises(GeometryError):
        build_mesh(tri, RegionSpec(), 0.25)


def test_region_outside_domain_rejected():
    regions = RegionSpec(door_regions=[rect(1.5, 0.2, 2.5, 0.4)])
    with pytest.raises(ContainmentError):
        build_mesh(rect(0, 0, 1, 1), regions, 0.25)


def test_sensor_outside_domain_rejected():
    regions = RegionSpec(sensor_points=[[3.0, 3.0]], sensor_radius=0.5)
    with pytest.raises(ContainmentError):
        build_mesh(rect(0, 0, 1, 1), regions, 0.25)


def test_refinement_scaling():
    coarse = build_mesh(L_SHAPE, RegionSpec(), 0.4)
    fine = build_mesh(L_SHAPE, RegionSpec(), 0.2)
    assert fine.n_triangles >= 2 * coarse.n_triangles
    assert fine.h_max == pytest.approx(0.5 * coarse.h_max, rel=0.25)


# --- material fields -------------------------------------------------------

KAPPA0, KAPPA_W, ALPHA_W = 1e-2, 1e-4, 1e3


def test_material_all_doors_open(two_door_mesh, two_door_regions):
    # build a wall-free spec on the same mesh so "open" means background
    regions = RegionSpec(door_regions=two_door_regions.door_regions)
    mesh = build_mesh(rect(0, 0, 3, 2), regions, 0.4)
    alpha, kappa = material_fields(mesh, regions, [1.0, 1.0], KAPPA0, KAPPA_W, ALPHA_W)
    assert np.all(alpha.values == 0.0)
    assert np.all(kappa.values == KAPPA0)


def test_material_closed_door_values(two_door_mesh, two_door_regions):
    alpha, kappa = material_fields(
        two_door_mesh, two_door_regions, [0.0, 0.0], KAPPA0, KAPPA_W, ALPHA_W
    )
    door = two_door_mesh.triangles_in("door0")
    assert np.all(alpha.values[door] == ALPHA_W)
    assert np.allclose(kappa.values[door], KAPPA_W, rtol=1e-12)
    free = [
        t
        for t in range(two_door_mesh.n_triangles)
        if not two_door_mesh.region_tags[t]
        or two_door_mesh.region_tags[t] <= {"fan0", "target"}
    ]
    assert np.all(alpha.values[free] == 0.0)
    assert np.allclose(kappa.values[free], KAPPA0, rtol=1e-12)


def test_material_half_open(two_door_mesh, two_door_regions):
    alpha, kappa = material_fields(
        two_door_mesh, two_door_regions, [0.5, 1.0], KAPPA0, KAPPA_W, ALPHA_W
    )
    door = two_door_mesh.triangles_in("door0")
    assert np.allclose(alpha.values[door], 0.5 * ALPHA_W)
    assert np.allclose(kappa.values[door], KAPPA0 + 0.5 * (KAPPA_W - KAPPA0))


def test_material_affine_in_theta(two_door_mesh, two_door_regions):
    rng = np.random.default_rng(7)
    for _ in range(5):
        t1, t2 = rng.uniform(0, 1, 2), rng.uniform(0, 1, 2)
        s = rng.uniform()
        a1, k1 = material_fields(two_door_mesh, two_door_regions, t1, KAPPA0, KAPPA_W, ALPHA_W)
        a2, k2 = material_fields(two_door_mesh, two_door_regions, t2, KAPPA0, KAPPA_W, ALPHA_W)
        am, km = material_fields(
            two_door_mesh, two_door_regions, s * t1 + (1 - s) * t2, KAPPA0, KAPPA_W, ALPHA_W
        )
        assert np.allclose(am.values, s * a1.values + (1 - s) * a2.values, atol=1e-12)
        assert np.allclose(km.values, s * k1.values + (1 - s) * k2.values, atol=1e-12)


def test_material_theta_out_of_range(two_door_mesh, two_door_regions):
    with pytest.raises(DomainError):
        material_fields(two_door_mesh, two_door_regions, [1.2, 0.0], KAPPA0, KAPPA_W, ALPHA_W)
    with pytest.raises(DomainError):
        material_fields(two_door_mesh, two_door_regions, [-0.1, 0.0], KAPPA0, KAPPA_W, ALPHA_W)


# --- sensor bumps ----------------------------------------------------------

def test_sensor_constant_field():
    mesh = build_mesh(rect(0, 0, 2, 2), RegionSpec(), 0.2)
    bump = normalize_bump(mesh, [1.0, 1.0], 0.5)
    space = fem.p1_space(mesh)
    fld = fem.Field(space, np.full(space.dof_count, 3.75))
    assert sample_sensor(fld, bump) == pytest.approx(3.75, abs=1e-9)


def test_sensor_linear_field_centered():
    mesh = build_mesh(rect(0, 0, 2, 2), RegionSpec(), 0.1)
    r = 0.2
    bump = normalize_bump(mesh, [1.0, 1.0], r)
    space = fem.p1_space(mesh)
    fld = fem.interpolate_p1(space, lambda x, y: x)
    s = sample_sensor(fld, bump)
    # symmetry about the center leaves only quadrature asymmetry, O(r^2)
    assert abs(s - 1.0) <= 0.05 * r**2


def test_sensor_linearity_in_field():
    mesh = build_mesh(rect(0, 0, 2, 2), RegionSpec(), 0.25)
    bump = normalize_bump(mesh, [0.9, 1.1], 0.5)
    space = fem.p1_space(mesh)
    rng = np.random.default_rng(3)
    f1 = fem.Field(space, rng.normal(size=space.dof_count))
    f2 = fem.Field(space, rng.normal(size=space.dof_count))
    a, b = 2.3, -0.7
    combo = fem.Field(space, a * f1.coeffs + b * f2.coeffs)
    assert sample_sensor(combo, bump) == pytest.approx(
        a * sample_sensor(f1, bump) + b * sample_sensor(f2, bump), abs=1e-12
    )


def test_sensor_paper_radius_support():
    from hvacfem.scenario import load_builtin

    sc = load_builtin("paper_apartment")
    assert sc.regions.sensor_radius == 1.0
    mesh = build_mesh(sc.outer, sc.regions, sc.controller_h)
    bump = normalize_bump(mesh, sc.regions.sensor_points[0], 1.0)
    assert np.isfinite(bump.sigma) and bump.sigma > 0
    # support area ~ pi r^2 (sensor sits >1 m from any exterior wall)
    from hvacfem.quadrature import TRI_WEIGHTS, physical_points

    pts = physical_points(mesh.coords())
    phi = bump.values(pts.reshape(-1, 2)).reshape(mesh.n_triangles, -1)
    covered = float(
        np.einsum("t,q,tq->", mesh.areas(), TRI_WEIGHTS, (phi > 0).astype(float))
    )
    assert covered == pytest.approx(np.pi, rel=0.2)


def test_disjoint_sensor_disk_rejected():
    mesh = build_mesh(rect(0, 0, 1, 1), RegionSpec(), 0.25)
    with pytest.raises(ContainmentError):
        normalize_bump(mesh, [5.0, 5.0], 0.3)


# --- IO and point location -------------------------------------------------

def test_mesh_text_roundtrip(tmp_path, two_door_mesh):
    path = tmp_path / "mesh.txt"
    save_mesh(two_door_mesh, path)
    first = path.read_text().splitlines()
    assert first[0] == "MESH2D v1"
    again = load_mesh(path)
    assert np.array_equal(again.vertices, two_door_mesh.vertices)
    assert np.array_equal(again.triangles, two_door_mesh.triangles)
    assert np.array_equal(again.boundary_edges, two_door_mesh.boundary_edges)
    assert again.region_tags == two_door_mesh.region_tags


def test_load_mesh_bad_header(tmp_path):
    path = tmp_path / "bad.txt"
    path.write_text("NOT A MESH\n")
    with pytest.raises(GeometryError):
        load_mesh(path)


def test_point_locator(two_door_mesh):
    loc = PointLocator(two_door_mesh)
    rng = np.random.default_rng(11)
    pts = rng.uniform([0.01, 0.01], [2.99, 1.99], size=(40, 2))
    tri, bary = loc.locate(pts)
    recon = np.einsum(
        "ni,nix->nx", bary, two_door_mesh.vertices[two_door_mesh.triangles[tri]]
    )
    assert np.allclose(recon, pts, atol=1e-9)
    with pytest.raises(GeometryError):
        loc.locate([[10.0, 10.0]])


def test_point_in_polygon_boundary():
    poly = rect(0, 0, 1, 1)
    assert point_in_polygon((0.5, 0.5), poly)
    assert point_in_polygon((0.0, 0.5), poly)  # boundary counts as inside
    assert not point_in_polygon((1.5, 0.5), poly)
