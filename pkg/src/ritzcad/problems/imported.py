"""Generic Laplace-type problem on an imported patch file.

``-div(c grad u) = 0`` with a piecewise-constant coefficient looked up by
patch material, constant Dirichlet data on ``dirichlet`` edges, homogeneous
Neumann data on ``neumann`` edges and, when a symmetry angle is given,
anti-periodic pairing of ``antiperiodic_left``/``antiperiodic_right`` edges.
"""

from __future__ import annotations

import numpy as np

from ..functional import EnergySpec, Physics, preset_terms
from ..geometry import GeometryError, load_patches, match_antiperiodic, match_interfaces
from ..network import NetworkConfig
from ..sampling import Budgets, build_plan, rotation
from .base import Problem

DEFAULT_BUDGETS = Budgets(interior=2000, dirichlet=400, neumann=400, interface=400,
                          antiperiodic=200)


def build_imported(geometry_file, preset: str = "dg", *, materials: dict | None = None,
                   budgets: Budgets | None = None, beta: float = 1e3,
                   dirichlet_value: float = 0.0, symmetry_deg: float | None = None,
                   network=(4, 10), schedule=None, skip: int = 1) -> Problem:
    patches = load_patches(geometry_file)
    domain = match_interfaces(patches)
    if symmetry_deg is not None:
        domain = match_antiperiodic(domain, rotation(np.deg2rad(symmetry_deg)))
    elif domain.boundary_edges("antiperiodic_left") or domain.boundary_edges("antiperiodic_right"):
        raise GeometryError("anti-periodic edges need a symmetry angle")
    subs = domain.subdomains()
    materials = materials or {}
    coef = {}
    for s in subs:
        mat = next(p.material for p in domain.patches if p.subdomain == s)
        coef[s] = float(materials.get(mat, 1.0))
    budgets = budgets or DEFAULT_BUDGETS
    if preset == "single":
        budgets = Budgets(**{**budgets.__dict__, "interface": 0})
    plan = build_plan(domain, budgets, skip=skip)

    # fixed input normalisation from the bounding box
    pts = np.concatenate([p.control_points.reshape(-1, 2) for p in domain.patches])
    lo, hi = pts.min(axis=0), pts.max(axis=0)
    shift = tuple(float(v) for v in 0.5 * (lo + hi))
    scale = float(2.0 / max(np.max(hi - lo), 1e-12))
    cfg = NetworkConfig(int(network[0]), int(network[1]), input_shift=shift, input_scale=scale)
    if preset == "single":
        networks, configs = {s: "u" for s in subs}, {"u": cfg}
    else:
        networks = {s: f"u_{s}" for s in subs}
        configs = {f"u_{s}": cfg for s in subs}
    phys = Physics(
        coef={s: 0.5 * c for s, c in coef.items()},
        dirichlet=lambda x, n: np.full(len(x), dirichlet_value),
        neumann=None,
        beta_dirichlet=beta, beta_interface=beta, beta_antiperiodic=beta, flux_scale=2.0,
    )
    spec = EnergySpec(preset_terms(preset, plan, networks, phys), networks, configs)
    return Problem(
        name="imported", preset=preset, domain=domain, spec=spec, plan=plan, budgets=budgets,
        schedule=schedule or [(2000, 1e-3)], material=coef, reference=None,
        meta={"geometry": str(geometry_file)},
    )
