"""Deterministic exports: VTK legacy ASCII snapshots and CSV logs.

Floats are written with a fixed %.12g format so identical runs produce
byte-identical files.
"""

import numpy as np

from .fem import P1, P1P, P2V


def fnum(v):
    return f"{float(v):.12g}"


def write_vtk(path, mesh, scalars=None, vectors=None, title="hvacfem fields"):
    """Unstructured-grid legacy VTK with P1 point data; P2 velocities are
    exported at the mesh vertices."""
    scalars = scalars or {}
    vectors = vectors or {}
    nv = mesh.n_vertices
    with open(path, "w") as f:
        f.write("# vtk DataFile Version 3.0\n")
        f.write(f"{title}\n")
        f.write("ASCII\nDATASET UNSTRUCTURED_GRID\n")
        f.write(f"POINTS {nv} double\n")
        for x, y in mesh.vertices:
            f.write(f"{fnum(x)} {fnum(y)} 0\n")
        nt = mesh.n_triangles
        f.write(f"CELLS {nt} {4 * nt}\n")
        for a, b, c in mesh.triangles:
            f.write(f"3 {a} {b} {c}\n")
        f.write(f"CELL_TYPES {nt}\n")
        f.write("\n".join(["5"] * nt) + "\n")
        if scalars or vectors:
            f.write(f"POINT_DATA {nv}\n")
        for name, fld in scalars.items():
            vals = _vertex_scalars(mesh, fld)
            f.write(f"SCALARS {name} double 1\nLOOKUP_TABLE default\n")
            f.write("\n".join(fnum(v) for v in vals) + "\n")
        for name, fld in vectors.items():
            vals = _vertex_vectors(mesh, fld)
            f.write(f"VECTORS {name} double\n")
            for vx, vy in vals:
                f.write(f"{fnum(vx)} {fnum(vy)} 0\n")


def _vertex_scalars(mesh, fld):
    if isinstance(fld, np.ndarray):
        return fld[: mesh.n_vertices]
    if fld.space.kind in (P1, P1P):
        return fld.coeffs
    raise ValueError("scalar export expects a P1 field")


def _vertex_vectors(mesh, fld):
    if isinstance(fld, np.ndarray):
        return fld[: mesh.n_vertices]
    if fld.space.kind == P2V:
        nv = mesh.n_vertices
        return np.column_stack([fld.coeffs[0 : 2 * nv : 2], fld.coeffs[1 : 2 * nv : 2]])
    raise ValueError("vector export expects a P2 velocity field")


def write_csv(path, header, rows):
    """rows: iterables of values; floats fixed-formatted, rest str()."""
    with open(path, "w", newline="") as f:
        f.write(",".join(header) + "\n")
        for row in rows:
            f.write(",".join(_cell(v) for v in row) + "\n")


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return fnum(v)
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return str(v)


def write_trace(path, trace, timings=False):
    """Optimizer trace: one row per iteration."""
    header = ["iter", "J", "V", "beta"] + (["wall_ms"] if timings else [])
    rows = []
    for r in trace:
        row = [r.iteration, r.value, r.optimality, r.beta]
        if timings:
            row.append(r.wall_ms)
        rows.append(row)
    write_csv(path, header, rows)


def trajectory_header(n_doors, timings=False):
    head = ["cycle", "t_i", "J_e", "J_c"]
    head += [f"theta_hat{i}" for i in range(n_doors)]
    head += ["mean_abs_pmv", "energy_surrogate"]
    if timings:
        head += ["wall_ms_est", "wall_ms_ctl"]
    return head


def write_trajectory(path, log, timings=False):
    """Receding-horizon log: one row per cycle."""
    header = trajectory_header(log.n_doors, timings)
    rows = []
    for r in log.rows:
        row = [r.cycle, r.t_i, r.J_e, r.J_c, *r.theta_hat, r.mean_abs_pmv,
               r.energy_surrogate]
        if timings:
            row += [r.wall_ms_est, r.wall_ms_ctl]
        rows.append(row)
    write_csv(path, header, rows)
