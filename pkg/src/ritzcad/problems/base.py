"""Problem container, evaluation helpers and error metrics."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..functional import EnergySpec
from ..geometry import MultiPatchDomain
from ..network import ParamSet, count_parameters, predict
from ..sampling import Budgets, SamplePlan, build_plan, concat_interior

# Evaluation samples start this far into each Sobol stream, past any training budget.
EVAL_SKIP = 1 << 16


@dataclass
class Problem:
    name: str
    preset: str
    domain: MultiPatchDomain
    spec: EnergySpec
    plan: SamplePlan
    budgets: Budgets
    schedule: list
    material: dict[str, float]           # physical coefficient per subdomain (eps or nu)
    reference: Callable | None = None    # x -> (u, ux, uy)
    meta: dict = field(default_factory=dict)

    def parameter_counts(self) -> dict[str, int]:
        return {n: count_parameters(c) for n, c in self.spec.configs.items()}

    def total_parameters(self) -> int:
        return sum(self.parameter_counts().values())

    def eval_plan(self, budgets: Budgets | None = None, skip: int = EVAL_SKIP) -> SamplePlan:
        """A fresh plan drawn from later in the Sobol streams than the training plan."""
        return build_plan(self.domain, budgets or self.budgets, skip=skip)

    def network_of_patch(self, k: int) -> str:
        return self.spec.networks[self.domain.patches[k].subdomain]


def evaluate_field(problem: Problem, params: dict[str, ParamSet], points, patches):
    """u, ux, uy at points, each evaluated with the network owning its patch."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    patches = np.asarray(patches)
    u = np.full(len(points), np.nan)
    ux, uy = u.copy(), u.copy()
    owner = np.array([problem.network_of_patch(int(k)) if k >= 0 else "" for k in patches])
    for name, cfg in problem.spec.configs.items():
        sel = owner == name
        if np.any(sel):
            u[sel], ux[sel], uy[sel] = predict(params[name], cfg, points[sel], need_grad=True)
    return u, ux, uy


def interior_samples(plan: SamplePlan):
    return concat_interior(plan.per_patch[k] for k in sorted(plan.per_patch))


def error_metrics(u, u_ref, quad) -> dict[str, float]:
    """Relative L2 (quadrature-weighted), max abs and mean abs error."""
    u, u_ref, quad = (np.asarray(a, dtype=float) for a in (u, u_ref, quad))
    err = u - u_ref
    ref_norm = np.sqrt(np.sum(quad * u_ref**2))
    return {
        "rel_l2": float(np.sqrt(np.sum(quad * err**2)) / ref_norm) if ref_norm > 0 else float("nan"),
        "max_abs": float(np.max(np.abs(err))),
        "mean_abs": float(np.mean(np.abs(err))),
    }


def solution_metrics(problem: Problem, params: dict[str, ParamSet], plan: SamplePlan | None = None):
    """Error metrics against the problem's reference on fresh samples."""
    if problem.reference is None:
        raise ValueError(f"problem {problem.name!r} has no reference solution")
    plan = plan or problem.eval_plan()
    s = interior_samples(plan)
    u, _, _ = evaluate_field(problem, params, s.x, s.patch)
    u_ref = problem.reference(s.x)[0]
    return error_metrics(u, u_ref, s.quad)


def paired_traces(problem: Problem, params, pairs):
    """Values and normal derivatives (w.r.t. side k's normal) on both sides of paired samples."""
    a, b = pairs.side_k, pairs.side_l
    uk, uxk, uyk = evaluate_field(problem, params, a.x, a.patch)
    ul, uxl, uyl = evaluate_field(problem, params, b.x, b.patch)
    n = a.normal
    return uk, ul, uxk * n[:, 0] + uyk * n[:, 1], uxl * n[:, 0] + uyl * n[:, 1]


def interface_report(problem: Problem, params, plan: SamplePlan) -> dict:
    """Jump and flux-mismatch statistics over every inter-subdomain interface."""
    P = problem.domain.patches
    jumps, flux, flux_ref = [], [], []
    for pairs in plan.interfaces.values():
        uk, ul, dk, dl = paired_traces(problem, params, pairs)
        ck = np.array([problem.material[P[k].subdomain] for k in pairs.side_k.patch])
        cl = np.array([problem.material[P[k].subdomain] for k in pairs.side_l.patch])
        jumps.append(np.abs(uk - ul))
        flux.append(np.abs(ck * dk - cl * dl))
        flux_ref.append(np.abs(cl * dl))
    if not jumps:
        return {"count": 0}
    j, f, fr = (np.concatenate(v) for v in (jumps, flux, flux_ref))
    scale = fr.max() if fr.max() > 0 else 1.0
    return {
        "count": int(j.size),
        "jump_median": float(np.median(j)),
        "jump_max": float(j.max()),
        "flux_residual_median": float(np.median(f)),
        "flux_residual_normalized_median": float(np.median(f) / scale),
        "flux_residual_max": float(f.max()),
    }


def write_field_csv(path, problem: Problem, params, plan: SamplePlan | None = None) -> int:
    """``x,y,subdomain,u,ux,uy[,u_ref,abs_err]`` rows on interior samples."""
    plan = plan or problem.eval_plan()
    s = interior_samples(plan)
    u, ux, uy = evaluate_field(problem, params, s.x, s.patch)
    ref = problem.reference(s.x)[0] if problem.reference is not None else None
    subs = [problem.domain.patches[int(k)].subdomain for k in s.patch]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y", "subdomain", "u", "ux", "uy"] + (["u_ref", "abs_err"] if ref is not None else []))
        for i in range(len(s)):
            row = [*s.x[i].tolist(), subs[i], float(u[i]), float(ux[i]), float(uy[i])]
            if ref is not None:
                row += [float(ref[i]), float(abs(u[i] - ref[i]))]
            w.writerow(row)
    return len(s)


def boundary_report(problem: Problem, params, plan: SamplePlan) -> dict:
    """Solution range and residuals of the Dirichlet and anti-periodic conditions."""
    s = interior_samples(plan)
    u, _, _ = evaluate_field(problem, params, s.x, s.patch)
    out = {"u_min": float(u.min()), "u_max": float(u.max()), "range": float(u.max() - u.min())}
    d = plan.boundary_set("dirichlet")
    if d is not None:
        ud, _, _ = evaluate_field(problem, params, d.x, d.patch)
        g = np.zeros(len(d))
        for t in problem.spec.terms:
            if t.kind in ("dirichlet_penalty", "dg_dirichlet") and t.data is not None:
                g = np.asarray(t.data(d.x, d.normal), dtype=float)
                break
        r = np.abs(ud - g)
        out.update(dirichlet_median=float(np.median(r)), dirichlet_max=float(r.max()))
    if plan.antiperiodic:
        res = []
        for pairs in plan.antiperiodic.values():
            uk, ul, _, _ = paired_traces(problem, params, pairs)
            res.append(np.abs(uk + ul))
        r = np.concatenate(res)
        out.update(antiperiodic_median=float(np.median(r)), antiperiodic_max=float(r.max()))
    return out
