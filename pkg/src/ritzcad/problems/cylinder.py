"""Dielectric cylinder in a uniform external field.

Square ``[-1,1]^2`` containing a disk of radius ``r0`` with permittivity
``eps_c`` in a background of ``eps_nc``. The closed-form potential is used as
Dirichlet data on ``x = +-1``, its normal derivative as Neumann data on
``y = +-1``, and as the reference for error metrics.

The geometry has nine patches: a central square and four curved quads fill
the disk, four ruled patches fill the gap between circle and outer square.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from ..functional import EnergySpec, Physics, preset_terms
from ..geometry import (
    KnotVector, MultiPatchDomain, Patch, arc, match_interfaces, ruled_patch, segment,
)
from ..network import NetworkConfig, ParamSet
from ..sampling import Budgets, build_plan
from .base import Problem, evaluate_field


@dataclass(frozen=True)
class CylinderCase:
    r0: float = 0.5
    eps_c: float = 100.0
    eps_nc: float = 1.0
    e_inf: float = 10.0
    half_width: float = 1.0
    inner_square: float = 0.25  # half-width of the central patch of the disk


def cylinder_analytic(x, case: CylinderCase = CylinderCase()):
    """Exact potential and gradient: returns (u, ux, uy)."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    X, Y = x[:, 0], x[:, 1]
    r2 = X**2 + Y**2
    kappa = case.eps_c / case.eps_nc
    E = case.e_inf
    inside = r2 <= case.r0**2
    A = (kappa - 1) / (kappa + 1) * case.r0**2
    with np.errstate(divide="ignore", invalid="ignore"):
        r4 = np.where(inside, 1.0, r2**2)
        rr = np.where(inside, 1.0, r2)
        u_out = -E * X * (1 - A / rr)
        ux_out = -E + E * A * (Y**2 - X**2) / r4
        uy_out = -2 * E * A * X * Y / r4
    c_in = -2 * E / (kappa + 1)
    u = np.where(inside, c_in * X, u_out)
    ux = np.where(inside, c_in, ux_out)
    uy = np.where(inside, 0.0, uy_out)
    return u, ux, uy


def cylinder_patches(case: CylinderCase = CylinderCase()) -> list[Patch]:
    w = np.cos(np.pi / 4)
    s, r0, L = case.inner_square, case.r0, case.half_width

    grid = np.array([-s, 0.0, s])
    P = np.stack(np.meshgrid(grid, grid, indexing="ij"), axis=-1)
    W = np.outer([1, w, 1], [1, w, 1])
    centre = Patch(KnotVector.clamped(2), KnotVector.clamped(2), P, W, material="cylinder")

    patches = [centre]
    disk, outer = [], []
    for phi in (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi):
        a0, a1 = phi + np.pi / 4, phi - np.pi / 4  # clockwise, so v points outward
        corner = lambda R, a: R * np.sqrt(2) * np.array([np.cos(a), np.sin(a)])
        circle = arc((0, 0), r0, a0, a1)
        disk.append(ruled_patch(segment(corner(s, a0), corner(s, a1), w), circle,
                                material="cylinder"))
        # outer square edge: Dirichlet on x = +-1, Neumann on y = +-1
        tag = "dirichlet" if np.isclose(np.cos(phi) ** 2, 1.0) else "neumann"
        outer.append(ruled_patch(circle, segment(corner(L, a0), corner(L, a1), w),
                                 material="background", edge_tags={"north": tag}))
    return patches + disk + outer


def cylinder_domain(case: CylinderCase = CylinderCase()) -> MultiPatchDomain:
    return match_interfaces(cylinder_patches(case))


CYLINDER_BUDGETS = Budgets(interior=4000, dirichlet=1200, neumann=1200, interface=600)
DESK_BUDGETS = Budgets(interior=2000, dirichlet=600, neumann=600, interface=300)
CYLINDER_SCHEDULE = [(30000, 1e-3), (10000, 1e-4)]
DESK_SCHEDULE = [(3000, 1e-2), (1500, 3e-3), (500, 1e-3)]


def cylinder_networks(preset: str) -> tuple[dict, dict]:
    if preset == "single":
        return ({"cylinder": "u", "background": "u"},
                {"u": NetworkConfig(blocks=6, neurons=10)})
    return ({"cylinder": "u_c", "background": "u_nc"},
            {"u_c": NetworkConfig(blocks=4, neurons=10),
             "u_nc": NetworkConfig(blocks=4, neurons=10)})


def build_cylinder(preset: str = "dg", *, case: CylinderCase = CylinderCase(),
                   desk_scale: bool = False, budgets: Budgets | None = None,
                   beta_i: float = 1e3, beta_d: float = 1e3, schedule=None,
                   skip: int = 1) -> Problem:
    domain = cylinder_domain(case)
    budgets = budgets or (DESK_BUDGETS if desk_scale else CYLINDER_BUDGETS)
    if preset == "single":
        budgets = Budgets(**{**budgets.__dict__, "interface": 0})
    plan = build_plan(domain, budgets, skip=skip)
    networks, configs = cylinder_networks(preset)
    eps = {"cylinder": case.eps_c, "background": case.eps_nc}

    def dirichlet(x, n):
        return cylinder_analytic(x, case)[0]

    def neumann(x, n):
        _, ux, uy = cylinder_analytic(x, case)
        return ux * n[:, 0] + uy * n[:, 1]

    phys = Physics(
        coef={k: 0.5 * v for k, v in eps.items()},
        dirichlet=dirichlet, neumann=neumann,
        beta_dirichlet=beta_d, beta_interface=beta_i, flux_scale=2.0,
    )
    spec = EnergySpec(preset_terms(preset, plan, networks, phys), networks, configs)
    return Problem(
        name="cylinder", preset=preset, domain=domain, spec=spec, plan=plan,
        budgets=budgets, schedule=schedule or (DESK_SCHEDULE if desk_scale else CYLINDER_SCHEDULE),
        material=eps, reference=lambda x: cylinder_analytic(x, case),
        meta={"case": case},
    )


def interface_flux_check(problem: Problem, params: dict[str, ParamSet] | None, samples=None):
    """Flux continuity eps_c du_c/dn = eps_nc du_nc/dn on the circle.

    ``params=None`` substitutes the analytic solution on both sides, using
    the inner formula on the cylinder side and the outer formula on the
    background side.
    """
    case = problem.meta["case"]
    if samples is None:
        samples = next(iter(problem.eval_plan(_circle_budget(problem)).interfaces.values()))
    P = problem.domain.patches
    a, b = samples.side_k, samples.side_l
    if P[int(a.patch[0])].subdomain != "cylinder":
        a, b = b, a
    n = a.normal  # outward from the cylinder
    if params is None:
        kappa = case.eps_c / case.eps_nc
        c_in = -2 * case.e_inf / (kappa + 1)
        dc = c_in * n[:, 0]
        # outer branch evaluated exactly on the circle
        X, Y = b.x[:, 0], b.x[:, 1]
        A = (kappa - 1) / (kappa + 1) * case.r0**2
        r4 = (X**2 + Y**2) ** 2
        ux = -case.e_inf + case.e_inf * A * (Y**2 - X**2) / r4
        uy = -2 * case.e_inf * A * X * Y / r4
        dnc = ux * n[:, 0] + uy * n[:, 1]
    else:
        _, uxc, uyc = evaluate_field(problem, params, a.x, a.patch)
        _, uxn, uyn = evaluate_field(problem, params, b.x, b.patch)
        dc = uxc * n[:, 0] + uyc * n[:, 1]
        dnc = uxn * n[:, 0] + uyn * n[:, 1]
    res = np.abs(case.eps_c * dc - case.eps_nc * dnc)
    scale = np.max(np.abs(case.eps_nc * dnc))
    return {
        "residual": res,
        "median": float(np.median(res)),
        "max": float(np.max(res)),
        "normalized_median": float(np.median(res) / scale),
        "normalized_max": float(np.max(res) / scale),
    }


def _circle_budget(problem: Problem) -> Budgets:
    b = problem.budgets
    return Budgets(interior=b.interior, dirichlet=b.dirichlet, neumann=b.neumann,
                   interface=max(b.interface, 300), min_per_patch=b.min_per_patch)


def line_scan(problem: Problem, params: dict[str, ParamSet] | None, y: float = 0.1,
              count: int = 801):
    """Potential and field along a horizontal line.

    Columns: x, y, u, ex, ey, e_radial, d_radial (eps * e_radial), u_ref,
    e_radial_ref. ``params=None`` gives the analytic solution.
    """
    case = problem.meta["case"]
    xs = np.linspace(-case.half_width, case.half_width, count)
    pts = np.column_stack([xs, np.full(count, y)])
    idx, _ = problem.domain.locate(pts)
    ref = cylinder_analytic(pts, case)
    if params is None:
        u, ux, uy = ref
    else:
        u, ux, uy = evaluate_field(problem, params, pts, idx)
    r = np.linalg.norm(pts, axis=1)
    er = np.column_stack([pts[:, 0] / r, pts[:, 1] / r])
    eps = np.array([problem.material[problem.domain.patches[k].subdomain] for k in idx])
    e_rad = -(ux * er[:, 0] + uy * er[:, 1])
    e_rad_ref = -(ref[1] * er[:, 0] + ref[2] * er[:, 1])
    return np.column_stack([xs, pts[:, 1], u, -ux, -uy, e_rad, eps * e_rad, ref[0], e_rad_ref])


LINE_SCAN_HEADER = ["x", "y", "u", "ex", "ey", "e_radial", "d_radial", "u_ref", "e_radial_ref"]


def write_line_scan(path, scan: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(LINE_SCAN_HEADER)
        for row in scan:
            w.writerow([float(v) for v in row])


def scan_jumps(scan: np.ndarray, count: int = 2) -> np.ndarray:
    """x positions (midpoints) of the ``count`` largest jumps of e_radial along a scan."""
    x, e = scan[:, 0], scan[:, 5]
    d = np.abs(np.diff(e))
    top = np.sort(np.argsort(-d)[:count])
    return 0.5 * (x[top] + x[top + 1])
