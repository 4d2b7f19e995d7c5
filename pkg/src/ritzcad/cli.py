"""Command-line front end.

Every command reads a JSON run configuration (``--config``); the flags
``--seed``, ``--out`` and ``--desk-scale`` override the file. Exit codes:
0 success, 1 training diverged, 2 configuration or input error.

Config keys (all optional)::

    problem          "cylinder" | "pmsm" | "imported"        (default "cylinder")
    preset           "single" | "dg" | "coupling"            (default "dg")
    budgets          {"interior", "dirichlet", "neumann", "interface", "antiperiodic",
                      "min_per_patch"}
    schedule         [[epochs, learning_rate], ...]
    beta             cylinder: {"interface", "dirichlet"}; pmsm: {"rotor", "stator"};
                     imported: number
    seed             integer                                  (default 0)
    out              output directory                         (default "run")
    geometry         patch file (imported problems, or pmsm with imported geometry)
    materials        imported: {material: coefficient}
    dirichlet_value  imported: constant Dirichlet data
    symmetry_deg     imported: rotation angle pairing anti-periodic edges
    network          imported: [blocks, neurons]
    desk_scale       reduced budgets and schedule             (default false)
    checkpoint_every epochs between checkpoints (0 = final only)
    eps_inside       Adam epsilon under the square root       (default true)
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path


from .functional import PRESETS, ConfigurationError, write_history
from .geometry import GeometryError
from .network import count_parameters
from .optimizer import load_checkpoint, save_checkpoint, train
from .sampling import Budgets, write_edge_csv, write_interior_csv

log = logging.getLogger("ritzcad")

EXIT_OK, EXIT_DIVERGED, EXIT_CONFIG = 0, 1, 2
PROBLEMS = ("cylinder", "pmsm", "imported")


@dataclass
class RunConfig:
    problem: str = "cylinder"
    preset: str = "dg"
    budgets: dict | None = None
    schedule: list | None = None
    beta: dict | float | None = None
    seed: int = 0
    out: str = "run"
    geometry: str | None = None
    materials: dict | None = None
    dirichlet_value: float = 0.0
    symmetry_deg: float | None = None
    network: list | None = None
    desk_scale: bool = False
    checkpoint_every: int = 0
    eps_inside: bool = True
    label: str | None = None

    def __post_init__(self):
        if self.problem not in PROBLEMS:
            raise ConfigurationError(f"problem must be one of {PROBLEMS}, got {self.problem!r}")
        if self.preset not in PRESETS:
            raise ConfigurationError(f"preset must be one of {PRESETS}, got {self.preset!r}")
        if self.budgets is not None:
            unknown = set(self.budgets) - {f.name for f in fields(Budgets)}
            if unknown:
                raise ConfigurationError(f"unknown budget keys {sorted(unknown)}")
            for k, v in self.budgets.items():
                if k != "min_per_patch" and int(v) < 1 and not (k in ("neumann", "antiperiodic", "interface") and int(v) == 0):
                    raise ConfigurationError(f"budget {k} must be >= 1")
        if self.schedule is not None:
            if not self.schedule:
                raise ConfigurationError("schedule must not be empty")
            for entry in self.schedule:
                if len(entry) != 2 or int(entry[0]) < 0 or float(entry[1]) <= 0:
                    raise ConfigurationError(f"bad schedule entry {entry!r}")
        if self.problem == "imported" and not self.geometry:
            raise ConfigurationError("imported problems need a 'geometry' patch file")

    @classmethod
    def from_dict(cls, doc: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(doc) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys {sorted(unknown)}")
        return cls(**doc)

    def to_dict(self) -> dict:
        return asdict(self)


def load_config(path=None, **overrides) -> RunConfig:
    doc = {}
    if path is not None:
        try:
            doc = json.loads(Path(path).read_text())
        except FileNotFoundError:
            raise ConfigurationError(f"config file {path} not found") from None
        except json.JSONDecodeError as exc:
            raise ConfigurationError(f"config file {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise ConfigurationError("config file must hold a JSON object")
    doc.update({k: v for k, v in overrides.items() if v is not None})
    return RunConfig.from_dict(doc)


def build_problem(cfg: RunConfig):
    from .problems import build_cylinder, build_imported, build_pmsm

    budgets = None
    if cfg.budgets is not None:
        base = asdict(_default_budgets(cfg))
        budgets = Budgets(**{**base, **{k: int(v) for k, v in cfg.budgets.items()}})
    schedule = [(int(e), float(lr)) for e, lr in cfg.schedule] if cfg.schedule else None
    if cfg.problem == "cylinder":
        beta = cfg.beta or {}
        return build_cylinder(cfg.preset, desk_scale=cfg.desk_scale, budgets=budgets,
                              schedule=schedule, beta_i=float(beta.get("interface", 1e3)),
                              beta_d=float(beta.get("dirichlet", 1e3)))
    if cfg.problem == "pmsm":
        from .problems.pmsm import PmsmCase

        beta = cfg.beta or {}
        case = PmsmCase(beta_rotor=float(beta.get("rotor", 1e5)),
                        beta_stator=float(beta.get("stator", 2e4)))
        source = "imported" if cfg.geometry else "procedural"
        return build_pmsm(cfg.preset, case=case, source=source, geometry_file=cfg.geometry,
                          desk_scale=cfg.desk_scale, budgets=budgets, schedule=schedule)
    return build_imported(cfg.geometry, cfg.preset, materials=cfg.materials, budgets=budgets,
                          beta=float(cfg.beta if cfg.beta is not None else 1e3),
                          dirichlet_value=cfg.dirichlet_value, symmetry_deg=cfg.symmetry_deg,
                          network=tuple(cfg.network or (4, 10)), schedule=schedule)


def _default_budgets(cfg: RunConfig) -> Budgets:
    if cfg.problem == "cylinder":
        from .problems.cylinder import CYLINDER_BUDGETS, DESK_BUDGETS
    elif cfg.problem == "pmsm":
        from .problems.pmsm import DESK_BUDGETS, PMSM_BUDGETS as CYLINDER_BUDGETS
    else:
        from .problems.imported import DEFAULT_BUDGETS as CYLINDER_BUDGETS
        DESK_BUDGETS = CYLINDER_BUDGETS
    return DESK_BUDGETS if cfg.desk_scale else CYLINDER_BUDGETS


# -- commands ------------------------------------------------------------

def cmd_info(cfg: RunConfig, out=None) -> dict:
    out = out or sys.stdout
    pr = build_problem(cfg)
    counts = {}
    for sub, name in pr.spec.networks.items():
        counts[sub] = count_parameters(pr.spec.configs[name])
    report = {
        "problem": pr.name,
        "preset": pr.preset,
        "patches": len(pr.domain.patches),
        "interfaces": len(pr.domain.interfaces),
        "subdomain_interfaces": len(pr.domain.interfaces_between_subdomains()),
        "antiperiodic_pairs": len(pr.domain.antiperiodic),
        "networks": {n: count_parameters(c) for n, c in pr.spec.configs.items()},
        "parameters_per_subdomain": counts,
        "total_parameters": pr.total_parameters(),
        "budgets": asdict(pr.budgets),
        "terms": [t.name for t in pr.spec.terms],
        "schedule": [list(s) for s in pr.schedule],
    }
    print(f"problem      {pr.name} ({pr.preset})", file=out)
    print(f"patches      {report['patches']}", file=out)
    print(f"interfaces   {report['interfaces']} ({report['subdomain_interfaces']} between subdomains)",
          file=out)
    if report["antiperiodic_pairs"]:
        print(f"anti-periodic pairs {report['antiperiodic_pairs']}", file=out)
    for sub, n in counts.items():
        print(f"  |theta| {sub:<18} {n:>7}  ({pr.spec.networks[sub]})", file=out)
    print(f"total |theta| {report['total_parameters']}", file=out)
    b = pr.budgets
    print(f"budgets      interior={b.interior} dirichlet={b.dirichlet} neumann={b.neumann} "
          f"interface={b.interface} antiperiodic={b.antiperiodic}", file=out)
    print(f"terms        {len(pr.spec.terms)}", file=out)
    return report


def cmd_sample(cfg: RunConfig, out=None) -> dict:
    out = out or sys.stdout
    pr = build_problem(cfg)
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    n_int = write_interior_csv(d / "samples_interior.csv", pr.plan)
    n_edge = write_edge_csv(d / "samples_edges.csv", pr.plan)
    print(f"wrote {n_int} interior and {n_edge} edge samples to {d}", file=out)
    return {"interior": n_int, "edges": n_edge}


def cmd_train(cfg: RunConfig, out=None) -> int:
    out = out or sys.stdout
    pr = build_problem(cfg)
    d = Path(cfg.out)
    d.mkdir(parents=True, exist_ok=True)
    (d / "config.json").write_text(json.dumps(cfg.to_dict(), indent=1))
    res = train(pr.spec, pr.plan, pr.schedule, seed=cfg.seed,
                checkpoint_every=cfg.checkpoint_every, checkpoint_dir=d,
                eps_inside=cfg.eps_inside, log_every=max(1, len(_epochs(pr.schedule)) // 20))
    write_history(d / "history.csv", res.history, res.term_names)
    save_checkpoint(d / "checkpoint.json", res.params, pr.spec.configs, len(res.history),
                    seed=cfg.seed, problem=pr.name, preset=pr.preset)
    status = "diverged" if res.diverged else "finished"
    print(f"{status}: {len(res.history)} epochs in {res.seconds:.1f}s, "
          f"final loss {res.history[-1, 0]:.6e}", file=out)
    return EXIT_DIVERGED if res.diverged else EXIT_OK


def _epochs(schedule):
    return range(sum(int(e) for e, _ in schedule))


def _load_params(cfg: RunConfig, pr, checkpoint):
    path = Path(checkpoint) if checkpoint else Path(cfg.out) / "checkpoint.json"
    if not path.exists():
        raise ConfigurationError(f"checkpoint {path} not found (run 'train' first)")
    params, configs, _ = load_checkpoint(path)
    if set(configs) != set(pr.spec.configs) or any(
            configs[n] != pr.spec.configs[n] for n in configs):
        raise ConfigurationError(f"checkpoint {path} does not match the configured networks")
    return params


def evaluate_problem(cfg: RunConfig, checkpoint=None, analytic: bool = False, write: bool = True):
    from .problems import (
        boundary_report, error_metrics, evaluate_field, interface_report, interior_samples,
        write_field_csv,
    )
    from .problems.cylinder import interface_flux_check, line_scan, write_line_scan

    pr = build_problem(cfg)
    plan = pr.eval_plan()
    s = interior_samples(plan)
    if analytic:
        if pr.reference is None:
            raise ConfigurationError("analytic mode needs a problem with a closed-form solution")
        u = pr.reference(s.x)[0]
        params = None
    else:
        params = _load_params(cfg, pr, checkpoint)
        u = evaluate_field(pr, params, s.x, s.patch)[0]
    metrics: dict = {"rel_l2": None, "max_abs": None, "mean_abs": None}
    if pr.reference is not None:
        metrics.update(error_metrics(u, pr.reference(s.x)[0], s.quad))
    if params is not None:
        metrics["interfaces"] = interface_report(pr, params, plan)
        metrics["boundary"] = boundary_report(pr, params, plan)
    if pr.name == "cylinder":
        flux = interface_flux_check(pr, params)
        metrics["flux"] = {k: v for k, v in flux.items() if k != "residual"}
    metrics["eval_points"] = len(s)
    if write:
        d = Path(cfg.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "metrics.json").write_text(json.dumps(metrics, indent=1))
        if params is not None:
            write_field_csv(d / "field.csv", pr, params, plan)
        if pr.name == "cylinder":
            write_line_scan(d / "line_scan.csv", line_scan(pr, params))
    return metrics


def cmd_evaluate(cfg: RunConfig, checkpoint=None, analytic=False, out=None) -> dict:
    out = out or sys.stdout
    m = evaluate_problem(cfg, checkpoint, analytic)
    keys = ("rel_l2", "max_abs", "mean_abs")
    print("  ".join(f"{k}={m[k]:.4e}" if m[k] is not None else f"{k}=n/a" for k in keys), file=out)
    return m


def cmd_compare(cfgs: list[RunConfig], checkpoints=None, out=None) -> list[dict]:
    out = out or sys.stdout
    checkpoints = checkpoints or [None] * len(cfgs)
    if len(checkpoints) != len(cfgs):
        raise ConfigurationError("give one checkpoint per config (or none)")
    rows = []
    for cfg, ck in zip(cfgs, checkpoints):
        m = evaluate_problem(cfg, ck, write=False)
        rows.append({
            "label": cfg.label or f"{cfg.problem}/{cfg.preset}",
            "rel_l2": m["rel_l2"], "max_abs": m["max_abs"], "mean_abs": m["mean_abs"],
            "jump_median": m.get("interfaces", {}).get("jump_median"),
            "flux_residual": (m.get("flux") or {}).get("normalized_median"),
        })
    cols = ["label", "rel_l2", "max_abs", "mean_abs", "jump_median", "flux_residual"]
    fmt = lambda v: "n/a" if v is None else (f"{v:.4e}" if isinstance(v, float) else str(v))
    width = max(len(r["label"]) for r in rows) + 2
    print(f"{'label':<{width}}" + "".join(f"{c:>14}" for c in cols[1:]), file=out)
    for r in rows:
        print(f"{r['label']:<{width}}" + "".join(f"{fmt(r[c]):>14}" for c in cols[1:]), file=out)
    return rows


# -- entry point ---------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="limit BLAS threads")
    common.add_argument("--desk-scale", action="store_true", default=None,
                        help="reduced budgets and schedule")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="ritzcad", description=__doc__.split("\n")[0])
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("info", parents=[common], help="geometry, parameter and budget summary")
    sub.add_parser("sample", parents=[common], help="write the training samples as CSV")
    sub.add_parser("train", parents=[common], help="train and write history and checkpoints")
    ev = sub.add_parser("evaluate", parents=[common], help="metrics, field and line-scan output")
    ev.add_argument("--checkpoint")
    ev.add_argument("--analytic", action="store_true",
                    help="evaluate the closed-form solution instead of a checkpoint")
    cmp_ = sub.add_parser("compare", parents=[common], help="side-by-side metrics")
    cmp_.add_argument("configs", nargs="+", help="run configurations to compare")
    cmp_.add_argument("--checkpoints", nargs="*")
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    if args.threads:
        from threadpoolctl import threadpool_limits

        threadpool_limits(args.threads)
    overrides = {"seed": args.seed, "out": args.out, "desk_scale": args.desk_scale}
    try:
        if args.command == "compare":
            cfgs = [load_config(c, **overrides) for c in args.configs]
            cmd_compare(cfgs, args.checkpoints)
            return EXIT_OK
        cfg = load_config(args.config, **overrides)
        if args.command == "info":
            cmd_info(cfg)
        elif args.command == "sample":
            cmd_sample(cfg)
        elif args.command == "train":
            return cmd_train(cfg)
        elif args.command == "evaluate":
            cmd_evaluate(cfg, args.checkpoint, args.analytic)
        return EXIT_OK
    except (ConfigurationError, GeometryError, FileNotFoundError, TypeError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
