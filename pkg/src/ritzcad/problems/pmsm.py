"""One-sixth sector of a six-pole permanent-magnet synchronous machine.

Magnetostatic z-potential ``u`` with piecewise-constant reluctivity ``nu``:
``-div(nu grad u) = curl m`` in the magnet, homogeneous Dirichlet data on the
inner rotor arc and the outer stator arc, and anti-periodic conditions
``u(T x) = -u(x)`` between the two side rays (``T`` = rotation by the pole
pitch).

The procedural geometry is a simplified sector built from the machine's
radii and angles. The rotor has five columns (side, slit, magnet, slit, side)
in three bands split at the magnet's lower and upper faces. The air gap is
two annular bands; the lower one follows the rotor's angular breakpoints and
the upper one the stator's, so the gap interface is non-conforming (both
sides belong to the same air subdomain). The stator has six annular-sector
slots. Real machine data can be loaded through the patch file format instead.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..functional import EnergySpec, Magnetization, Physics, preset_terms
from ..geometry import (
    GeometryError, MultiPatchDomain, Patch, Quadratic, arc, load_patches, match_antiperiodic,
    match_interfaces, ruled_patch, segment,
)
from ..network import NetworkConfig
from ..sampling import Budgets, build_plan, rotation
from .base import Problem

SUBDOMAINS = (
    "outer_rotor_yoke", "inner_rotor_yoke", "air", "magnet", "stator_yoke", "windings",
)
SUBDOMAIN_MATERIAL = {
    "outer_rotor_yoke": "iron", "inner_rotor_yoke": "iron", "air": "air",
    "magnet": "pm", "stator_yoke": "iron", "windings": "copper",
}
# blocks x neurons per subdomain network
ARCHITECTURES = {
    "outer_rotor_yoke": (8, 15), "inner_rotor_yoke": (8, 15), "air": (15, 15),
    "magnet": (8, 15), "stator_yoke": (15, 15), "windings": (15, 15),
}
SINGLE_ARCHITECTURE = (30, 24)


@dataclass(frozen=True)
class PmsmCase:
    # lengths in meters, angles in degrees
    r_rotor_inner: float = 0.016
    r_rotor_outer: float = 0.044
    r_airgap: float = 0.0447
    magnet_width: float = 0.019      # d1
    magnet_height: float = 0.007     # d2
    magnet_depth: float = 0.007      # d3
    r_stator_inner: float = 0.045
    r_stator_outer: float = 0.0675
    delta1: float = 8.5
    delta2: float = 42.0
    delta3: float = 7.0
    delta4: float = 5.7
    delta5: float = 4.0
    l1: float = 0.0006
    l2: float = 0.0054
    l3: float = 0.005
    l4: float = 0.0082
    nu0: float = 1.0
    nu_fe: float = 1.0 / 500.0
    nu_cu: float = 1.0
    nu_pm: float = 1.0 / 1.05
    b_r: float = 0.94
    beta_rotor: float = 1e5
    beta_stator: float = 2e4
    sector_deg: float = 60.0
    slots: int = 6

    def reluctivity(self) -> dict[str, float]:
        return {"iron": self.nu_fe, "air": self.nu0, "copper": self.nu_cu, "pm": self.nu_pm}


def _pt(r, deg):
    a = np.deg2rad(deg)
    return np.array([r * np.cos(a), r * np.sin(a)])


def _ang(p):
    return float(np.rad2deg(np.arctan2(p[1], p[0])))


def _mirror(p):
    return np.array([-p[0], p[1]])


def _arc(r, d0, d1) -> Quadratic:
    return arc((0.0, 0.0), r, np.deg2rad(d0), np.deg2rad(d1))


def _rotor_levels(c: PmsmCase):
    """Right-half breakpoints per level, ordered from the centre line outward."""
    R0, R3 = c.r_rotor_inner, c.r_rotor_outer
    x_m = 0.5 * c.magnet_width
    y_top = R3 - c.magnet_depth
    y_bot = y_top - c.magnet_height
    x_s = x_m + c.l3                    # slit reaches l3 beyond the magnet edge
    right = 90.0 - 0.5 * c.sector_deg
    M1, M2 = np.array([x_m, y_bot]), np.array([x_m, y_top])
    S1, S2 = np.array([x_s, y_bot]), np.array([x_s, y_top])
    P0 = R0 * M1 / np.linalg.norm(M1)
    S0 = R0 * S1 / np.linalg.norm(S1)
    Q0 = _pt(R0, right)
    Q1 = _pt(np.linalg.norm(S1), right)
    Q2 = _pt(np.linalg.norm(S2), right)
    O3 = _pt(R3, 90.0 - c.delta1)
    S3 = _pt(R3, 90.0 - c.delta1 - c.delta3)
    Q3 = _pt(R3, right)
    return [
        [P0, S0, Q0],   # L0: inner rotor arc
        [M1, S1, Q1],   # L1: magnet lower face
        [M2, S2, Q2],   # L2: magnet upper face
        [O3, S3, Q3],   # L3: outer rotor arc
    ]


def _level_points(half):
    """Full left-to-right breakpoint list of a level (6 points, 5 columns)."""
    return [_mirror(p) for p in half[::-1]] + list(half)


def _level_curves(points, radius):
    """Left-to-right pieces of a level: arcs when ``radius`` is given, else segments."""
    out = []
    for a, b in zip(points[:-1], points[1:]):
        out.append(_arc(radius, _ang(a), _ang(b)) if radius else segment(a, b))
    return out


def pmsm_patches(c: PmsmCase = PmsmCase()) -> list[Patch]:
    half = 0.5 * c.sector_deg
    left, right = 90.0 + half, 90.0 - half
    levels = [_level_points(h) for h in _rotor_levels(c)]
    curves = [
        _level_curves(levels[0], c.r_rotor_inner),
        _level_curves(levels[1], None),
        _level_curves(levels[2], None),
        _level_curves(levels[3], c.r_rotor_outer),
    ]
    # columns: side, slit, magnet, slit, side; bands: below / beside / above the magnet
    rotor_sub = [
        ["inner_rotor_yoke", "inner_rotor_yoke", "inner_rotor_yoke", "inner_rotor_yoke", "inner_rotor_yoke"],
        ["inner_rotor_yoke", "air", "magnet", "air", "inner_rotor_yoke"],
        ["inner_rotor_yoke", "air", "outer_rotor_yoke", "air", "inner_rotor_yoke"],
    ]
    patches = []

    def add(bottom, top, sub, region, tags=None):
        patches.append(ruled_patch(bottom, top, material=SUBDOMAIN_MATERIAL[sub], subdomain=sub,
                                   region=region, edge_tags=dict(tags or {})))

    ncol = 5
    for band in range(3):
        for col in range(ncol):
            tags = {}
            if band == 0:
                tags["south"] = "dirichlet"
            if col == 0:
                tags["west"] = "antiperiodic_left"
            if col == ncol - 1:
                tags["east"] = "antiperiodic_right"
            add(curves[band][col], curves[band + 1][col], rotor_sub[band][col], "rotor", tags)

    # air gap, rotor side: same angular breakpoints as the rotor surface
    rot_angles = [_ang(p) for p in levels[3]]
    for i in range(ncol):
        a0, a1 = rot_angles[i], rot_angles[i + 1]
        tags = {"north": "interior-free"}  # non-conforming gap interface, same subdomain
        if i == 0:
            tags["west"] = "antiperiodic_left"
        if i == ncol - 1:
            tags["east"] = "antiperiodic_right"
        add(_arc(c.r_rotor_outer, a0, a1), _arc(c.r_airgap, a0, a1), "air", "rotor", tags)

    # stator breakpoints: slot k centred at right + pitch * (k + 1/2)
    pitch = c.sector_deg / c.slots
    cuts = [left]
    for k in reversed(range(c.slots)):
        centre = right + pitch * (k + 0.5)
        cuts += [centre + 0.5 * c.delta4, centre - 0.5 * c.delta4]
    cuts.append(right)
    slot_col = [(i % 2 == 1) for i in range(len(cuts) - 1)]

    r_tip = c.r_stator_inner + c.l1
    r_slot = r_tip + c.l2 + c.l4
    radii = [c.r_airgap, c.r_stator_inner, r_tip, r_slot, c.r_stator_outer]
    ncols = len(cuts) - 1
    for band in range(4):
        for i in range(ncols):
            a0, a1 = cuts[i], cuts[i + 1]
            if band == 0:
                sub = "air"
            elif band == 2 and slot_col[i]:
                sub = "windings"
            else:
                sub = "stator_yoke"
            tags = {"south": "interior-free"} if band == 0 else {}
            if band == 3:
                tags["north"] = "dirichlet"
            if i == 0:
                tags["west"] = "antiperiodic_left"
            if i == ncols - 1:
                tags["east"] = "antiperiodic_right"
            add(_arc(radii[band], a0, a1), _arc(radii[band + 1], a0, a1), sub, "stator", tags)
    return patches


def pmsm_domain(c: PmsmCase = PmsmCase(), patches: list[Patch] | None = None,
                symmetry=None) -> MultiPatchDomain:
    domain = match_interfaces(patches if patches is not None else pmsm_patches(c))
    T = rotation(-np.deg2rad(c.sector_deg)) if symmetry is None else np.asarray(symmetry)
    return match_antiperiodic(domain, T)


def sector_area(c: PmsmCase = PmsmCase()) -> float:
    return np.deg2rad(c.sector_deg) / 2 * (c.r_stator_outer**2 - c.r_rotor_inner**2)


PMSM_BUDGETS = Budgets(interior=63000, dirichlet=1100, neumann=0, interface=13500,
                       antiperiodic=2800)
DESK_BUDGETS = Budgets(interior=8000, dirichlet=400, neumann=0, interface=1800,
                       antiperiodic=400)
PMSM_SCHEDULE = [(5000, 1e-3)]
DESK_SCHEDULE = [(2000, 1e-3)]


def pmsm_networks(preset: str, subdomains, case: PmsmCase,
                  adaptive_single: bool = False) -> tuple[dict, dict]:
    shift = (0.0, 0.5 * (case.r_rotor_inner + case.r_stator_outer))
    scale = 2.0 / (case.r_stator_outer - case.r_rotor_inner)
    if preset == "single":
        b, n = SINGLE_ARCHITECTURE
        cfg = NetworkConfig(b, n, adaptive_activations=adaptive_single,
                            input_shift=shift, input_scale=scale)
        return {s: "u" for s in subdomains}, {"u": cfg}
    nets, cfgs = {}, {}
    for s in subdomains:
        b, n = ARCHITECTURES.get(s, (15, 15))
        nets[s] = f"u_{s}"
        cfgs[f"u_{s}"] = NetworkConfig(b, n, input_shift=shift, input_scale=scale)
    return nets, cfgs


def build_pmsm(preset: str = "dg", *, case: PmsmCase = PmsmCase(), source: str = "procedural",
               geometry_file=None, desk_scale: bool = False, budgets: Budgets | None = None,
               schedule=None, skip: int = 1, symmetry=None) -> Problem:
    if source == "procedural":
        patches = pmsm_patches(case)
    elif source == "imported":
        if geometry_file is None:
            raise GeometryError("imported geometry needs a patch file")
        patches = load_patches(geometry_file)
    else:
        raise ValueError(f"unknown geometry source {source!r}")
    domain = pmsm_domain(case, patches, symmetry)
    if source == "imported":
        _check_imported(domain)
    budgets = budgets or (DESK_BUDGETS if desk_scale else PMSM_BUDGETS)
    if preset == "single":
        budgets = Budgets(**{**budgets.__dict__, "interface": 0})
    plan = build_plan(domain, budgets, skip=skip)
    subs = domain.subdomains()
    networks, configs = pmsm_networks(preset, subs, case)
    nu_of = case.reluctivity()
    material = {s: nu_of[_material_of(domain, s)] for s in subs}
    betas = {"rotor": case.beta_rotor, "stator": case.beta_stator, None: case.beta_rotor}
    phys = Physics(
        coef={s: 0.5 * v for s, v in material.items()},
        # magnetisation m = (0, nu0 * B_r) in the magnet
        sources={s: Magnetization(0.0, case.nu0 * case.b_r) for s in subs
                 if _material_of(domain, s) == "pm"},
        dirichlet=None, neumann=None,
        beta_dirichlet=betas, beta_interface=betas, beta_antiperiodic=betas, flux_scale=2.0,
    )
    spec = EnergySpec(preset_terms(preset, plan, networks, phys), networks, configs)
    return Problem(
        name="pmsm", preset=preset, domain=domain, spec=spec, plan=plan, budgets=budgets,
        schedule=schedule or (DESK_SCHEDULE if desk_scale else PMSM_SCHEDULE),
        material=material, reference=None, meta={"case": case, "source": source},
    )


def _material_of(domain: MultiPatchDomain, sub: str) -> str:
    for p in domain.patches:
        if p.subdomain == sub:
            return p.material
    raise KeyError(sub)


def _check_imported(domain: MultiPatchDomain) -> None:
    """Every untagged edge of an imported geometry must have a partner."""
    paired = {(i.k, i.edge_k) for i in domain.interfaces} | {(i.l, i.edge_l) for i in domain.interfaces}
    for k, p in enumerate(domain.patches):
        for e in ("south", "east", "north", "west"):
            tag = p.edge_tags.get(e, "interface")
            if tag == "interface" and (k, e) not in paired:
                raise GeometryError(f"patch {k} edge {e} has no matching neighbour")
