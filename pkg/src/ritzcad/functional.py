"""Energy functionals discretised on a :class:`~ritzcad.sampling.SamplePlan`.

A functional is an ordered list of :class:`EnergyTerm` objects. Each term
names the sample set it integrates over and the network(s) it reads. When the
loss graph is assembled, every network is evaluated exactly once on the
concatenation of all points that reference it and the per-term pieces are
sliced back out; the graph is then reused for the whole training run by
rebinding parameter values.

Per-sample integrands (``q`` is the quadrature weight carried by the sample):

=====================  ============================================================
interior               q * (coef |grad u|^2 - source)
neumann                -q * u * g_N
dirichlet_penalty      q * beta * (u - g_D)^2
dg_dirichlet           q * (-(coef grad u . n)(u - g_D) + beta/2 (u - g_D)^2)
dg_interface           q * (-{coef grad u} . n [u] + beta/2 [u]^2),  [u] = u_k - u_l
coupling_penalty       q * beta * (u_k - u_l)^2
dg_antiperiodic        as dg_interface with [u] = u_L + u_R
antiperiodic_penalty   q * beta * (u_L + u_R)^2
=====================  ============================================================

DG terms can be split into their ``consistency`` and ``penalty`` parts.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .autodiff import ExprGraph, NodeId
from .network import GraphNetwork, NetworkConfig, ParamSet
from .sampling import PairedSamples, SamplePlan

TERM_KINDS = (
    "interior", "neumann", "dirichlet_penalty", "dg_interface", "dg_dirichlet",
    "dg_antiperiodic", "coupling_penalty", "antiperiodic_penalty",
)
PAIRED_KINDS = ("dg_interface", "coupling_penalty", "dg_antiperiodic", "antiperiodic_penalty")
PRESETS = ("single", "dg", "coupling")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class LoadDensity:
    """Volume source f: contributes f(x) * u to the source integrand."""

    f: Callable[[np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Magnetization:
    """Constant magnetisation m; contributes m_x du/dy - m_y du/dx."""

    mx: float
    my: float


@dataclass
class EnergyTerm:
    kind: str
    ref: tuple
    nets: tuple
    name: str = ""
    coef: float = 1.0
    coef_l: float | None = None
    beta: float = 0.0
    data: Callable | None = None
    source: object = None
    part: str = "both"

    def __post_init__(self):
        if self.kind not in TERM_KINDS:
            raise ConfigurationError(f"unknown term kind {self.kind!r}")
        if self.part not in ("both", "consistency", "penalty"):
            raise ConfigurationError(f"unknown term part {self.part!r}")
        want = 2 if self.kind in PAIRED_KINDS else 1
        if len(self.nets) != want:
            raise ConfigurationError(f"{self.kind} needs {want} network(s), got {self.nets}")
        needs_beta = self.kind in ("dirichlet_penalty", "coupling_penalty", "antiperiodic_penalty")
        if self.part != "consistency" and self.kind.startswith("dg_"):
            needs_beta = True
        if needs_beta and self.beta <= 0:
            raise ConfigurationError(f"{self.kind} needs a positive penalty factor")
        if self.coef <= 0 or (self.coef_l is not None and self.coef_l <= 0):
            raise ConfigurationError("coefficients must be positive")
        if not self.name:
            self.name = self.kind + ("" if self.part == "both" else f"_{self.part}")


@dataclass
class EnergySpec:
    terms: list[EnergyTerm]
    networks: dict[str, str]            # subdomain -> network name
    configs: dict[str, NetworkConfig]   # network name -> architecture

    def validate(self, plan: SamplePlan | None = None) -> None:
        for sub, name in self.networks.items():
            if name not in self.configs:
                raise ConfigurationError(f"subdomain {sub!r} uses undefined network {name!r}")
        for t in self.terms:
            for n in t.nets:
                if n not in self.configs:
                    raise ConfigurationError(f"term {t.name!r} references missing network {n!r}")
            if plan is not None and resolve(plan, t.ref) is None:
                raise ConfigurationError(f"term {t.name!r}: sample set {t.ref} not in plan")

    def network_names(self) -> list[str]:
        return list(self.configs)


def resolve(plan: SamplePlan, ref: tuple):
    """Look up (and concatenate, for wildcard refs) the sample set a term integrates over."""
    from .sampling import concat_pairs

    kind, *key = ref
    if kind == "interior":
        return plan.interior.get(key[0])
    if kind == "boundary":
        tag, sub, region = key
        return plan.boundary_set(tag, sub, region)
    table = {"interface": plan.interfaces, "antiperiodic": plan.antiperiodic}.get(kind)
    if table is None:
        raise ConfigurationError(f"unknown sample-set kind {kind!r}")
    hits = [v for k, v in table.items()
            if all(want is None or want == have for want, have in zip(key, k))]
    if not hits:
        return None
    return hits[0] if len(hits) == 1 else concat_pairs(hits)


# -- graph assembly ------------------------------------------------------

class _Batch:
    """Collects point requests for one network, evaluates once, slices back."""

    def __init__(self):
        self.blocks: list[np.ndarray] = []
        self.index: dict[int, tuple[int, int]] = {}
        self.size = 0

    def request(self, pts: np.ndarray) -> int:
        key = id(pts)
        if key not in self.index:
            self.index[key] = (self.size, self.size + len(pts))
            self.blocks.append(pts)
            self.size += len(pts)
        return key


class LossModel:
    """The assembled loss graph for one (spec, plan) pair.

    Parameters are bound as graph variables once; :meth:`set_params` rebinds
    them and refreshes dependent nodes, so each epoch costs one forward and
    one reverse sweep.
    """

    def __init__(self, spec: EnergySpec, plan: SamplePlan, params: dict[str, ParamSet],
                 graph: ExprGraph | None = None):
        spec.validate(plan)
        for name in spec.configs:
            if name not in params:
                raise ConfigurationError(f"no parameters for network {name!r}")
        self.spec = spec
        self.graph = g = graph if graph is not None else ExprGraph()
        self.nets = {n: GraphNetwork.bind(params[n], spec.configs[n], g) for n in spec.configs}
        cache = {}
        for t in spec.terms:
            if t.ref not in cache:
                cache[t.ref] = resolve(plan, t.ref)
        self._samples = [cache[t.ref] for t in spec.terms]

        # a point block is evaluated with spatial gradients if any term needs them
        wants: dict[tuple[str, int], bool] = {}
        blocks = []
        for t, s in zip(spec.terms, self._samples):
            sides = [s] if not isinstance(s, PairedSamples) else [s.side_k, s.side_l]
            blocks.append([(net, side.x) for net, side in zip(t.nets, sides)])
            for net, x in blocks[-1]:
                key = (net, id(x))
                wants[key] = wants.get(key, False) or _needs_grad(t)
        batches = {(n, d): _Batch() for n in spec.configs for d in (True, False)}
        reqs = [[(net, wants[(net, id(x))], batches[(net, wants[(net, id(x))])].request(x))
                 for net, x in blk] for blk in blocks]
        fields = {}
        for (net, grad), b in batches.items():
            if b.size == 0:
                continue
            u, ux, uy = self.nets[net].evaluate(np.concatenate(b.blocks), need_grad=grad)
            fields[(net, grad)] = (b, u, ux, uy)
        self._fields = fields

        self.term_nodes: list[NodeId] = []
        for t, s, rq in zip(spec.terms, self._samples, reqs):
            sides = [self._slice(fields, *r) for r in rq]
            self.term_nodes.append(self._term(t, s, sides))
        if self.term_nodes:
            total = self.term_nodes[0]
            for node in self.term_nodes[1:]:
                total = g.build("add", [total, node])
        else:
            total = g.const(0.0)
        self.loss = total
        self._param_nodes = {n: net.param_nodes() for n, net in self.nets.items()}
        self._all_params = [p for n in spec.configs for p in self._param_nodes[n]]

    def _slice(self, fields, net, grad, key):
        b, u, ux, uy = fields[(net, grad)]
        lo, hi = b.index[key]
        g = self.graph
        full = lo == 0 and hi == b.size

        def cut(node):
            if node is None:
                return None
            return node if full else g.build("rows", [node], start=lo, stop=hi)

        return cut(u), cut(ux), cut(uy)

    # per-sample expression helpers
    def _c(self, v):
        return self.graph.const(np.asarray(v, dtype=float))

    def _op(self, op, *args, **kw):
        return self.graph.build(op, list(args), **kw)

    def _dn(self, ux, uy, normal, coef=1.0):
        """coef * grad u . n as a node."""
        d = self._op("add", self._op("mul", ux, self._c(coef * normal[:, 0])),
                     self._op("mul", uy, self._c(coef * normal[:, 1])))
        return d

    def _integrate(self, quad, integrand):
        return self._op("dot", self._c(quad), integrand)

    def _term(self, t: EnergyTerm, s, sides) -> NodeId:
        op, c = self._op, self._c
        if t.kind == "interior":
            u, ux, uy = sides[0]
            val = op("scale", op("add", op("square", ux), op("square", uy)), c=t.coef)
            src = t.source
            if isinstance(src, LoadDensity):
                val = op("sub", val, op("mul", c(src.f(s.x)), u))
            elif isinstance(src, Magnetization):
                # source integrand m_x u_y - m_y u_x, subtracted
                mag = op("sub", op("scale", uy, c=src.mx), op("scale", ux, c=src.my))
                val = op("sub", val, mag)
            elif src is not None:
                raise ConfigurationError(f"unsupported source {src!r}")
            return self._integrate(s.quad, val)

        if t.kind == "neumann":
            u = sides[0][0]
            gN = _data(t.data, s)
            return self._integrate(-s.quad * gN, u)

        if t.kind in ("dirichlet_penalty", "dg_dirichlet"):
            u, ux, uy = sides[0]
            r = op("sub", u, c(_data(t.data, s)))
            if t.kind == "dirichlet_penalty":
                return self._integrate(s.quad * t.beta, op("square", r))
            return self._dg(t, s.quad, lambda: self._dn(ux, uy, s.normal, t.coef), r)

        # paired terms
        (uk, uxk, uyk), (ul, uxl, uyl) = sides
        anti = t.kind in ("dg_antiperiodic", "antiperiodic_penalty")
        jump = op("add" if anti else "sub", uk, ul)
        if t.kind in ("coupling_penalty", "antiperiodic_penalty"):
            return self._integrate(s.quad * t.beta, op("square", jump))
        n = s.side_k.normal
        coef_l = t.coef if t.coef_l is None else t.coef_l

        def average():
            flux_k = self._dn(uxk, uyk, n, t.coef)
            if anti:
                # neighbour trace of the anti-periodic extension: grad = -T^T grad u_R
                flux_l = op("neg", self._dn(uxl, uyl, n @ s.symmetry.T, coef_l))
            else:
                flux_l = self._dn(uxl, uyl, n, coef_l)
            return op("scale", op("add", flux_k, flux_l), c=0.5)

        return self._dg(t, s.quad, average, jump)

    def _dg(self, t, quad, flux, jump):
        """DG consistency and/or penalty parts; ``flux`` builds the averaged flux node."""
        op = self._op
        parts = []
        if t.part in ("both", "consistency"):
            parts.append(self._integrate(-quad, op("mul", flux(), jump)))
        if t.part in ("both", "penalty"):
            parts.append(self._integrate(0.5 * t.beta * quad, op("square", jump)))
        return parts[0] if len(parts) == 1 else op("add", *parts)

    # -- evaluation ----------------------------------------------------
    def set_params(self, params: dict[str, ParamSet]) -> None:
        for name, net in self.nets.items():
            net.load(params[name])
        self.graph.recompute(self._all_params)

    def loss_value(self) -> float:
        return float(self.graph.value(self.loss))

    def term_values(self) -> np.ndarray:
        return np.array([float(self.graph.value(n)) for n in self.term_nodes])

    def gradients(self) -> dict[str, np.ndarray]:
        """Flat parameter gradients per network (ParamSet.to_vector layout)."""
        grads = self.graph.gradients(self.loss, self._all_params)
        out, pos = {}, 0
        for name in self.spec.configs:
            k = len(self._param_nodes[name])
            out[name] = np.concatenate([np.ravel(x) for x in grads[pos:pos + k]])
            pos += k
        return out

    def term_names(self) -> list[str]:
        return [t.name for t in self.spec.terms]


def _needs_grad(t: EnergyTerm) -> bool:
    if t.kind == "interior":
        return True
    if t.kind in ("dg_dirichlet", "dg_interface", "dg_antiperiodic"):
        return t.part != "penalty"
    return False


def _data(fn, s) -> np.ndarray:
    """Boundary data on edge samples; callables receive (points, outward normals)."""
    if fn is None:
        return np.zeros(len(s))
    return np.broadcast_to(np.asarray(fn(s.x, s.normal), dtype=float), (len(s),))


def assemble_loss(spec: EnergySpec, plan: SamplePlan, graph: ExprGraph,
                  params: dict[str, ParamSet]) -> NodeId:
    """Build the loss on ``graph`` and return its node id."""
    return LossModel(spec, plan, params, graph).loss


# -- standard functionals ------------------------------------------------

@dataclass
class Physics:
    """Material and boundary data shared by the three preset functionals.

    ``coef`` is the interior coefficient of |grad u|^2 (eps/2 or nu/2); the
    DG flux uses ``flux_scale * coef`` (i.e. eps or nu).
    """

    coef: dict[str, float]
    sources: dict[str, object] = field(default_factory=dict)
    dirichlet: Callable | None = None
    neumann: Callable | None = None
    beta_dirichlet: dict | float = 1e3
    beta_interface: dict | float = 1e3
    beta_antiperiodic: dict | float = 1e3
    flux_scale: float = 2.0


def _beta(b, region):
    if isinstance(b, dict):
        return b[region] if region in b else b[None]
    return float(b)


def preset_terms(preset: str, plan: SamplePlan, networks: dict[str, str],
                 phys: Physics) -> list[EnergyTerm]:
    """Terms of the single-network, DG or coupling functional for a plan."""
    if preset not in PRESETS:
        raise ConfigurationError(f"unknown preset {preset!r}")
    terms = []
    for sub in plan.interior:
        terms.append(EnergyTerm("interior", ("interior", sub), (networks[sub],),
                                name=f"interior[{sub}]", coef=phys.coef[sub],
                                source=phys.sources.get(sub)))
    for (tag, sub, region) in sorted(k for k in plan.boundary if k[0] == "neumann"):
        terms.append(EnergyTerm("neumann", ("boundary", "neumann", sub, region),
                                (networks[sub],), name=f"neumann[{sub}]",
                                data=phys.neumann))
    dkeys = sorted((k for k in plan.boundary if k[0] == "dirichlet"), key=str)
    for (tag, sub, region) in dkeys:
        ref = ("boundary", "dirichlet", sub, region)
        beta = _beta(phys.beta_dirichlet, region)
        label = f"[{sub}{'' if region is None else ':' + region}]"
        if preset == "dg":
            for part in ("consistency", "penalty"):
                terms.append(EnergyTerm("dg_dirichlet", ref, (networks[sub],),
                                        name=f"dg_dirichlet_{part}{label}",
                                        coef=phys.flux_scale * phys.coef[sub], beta=beta,
                                        data=phys.dirichlet, part=part))
        else:
            terms.append(EnergyTerm("dirichlet_penalty", ref, (networks[sub],),
                                    name=f"dirichlet{label}", beta=beta, data=phys.dirichlet))
    if preset != "single":
        for key in plan.interfaces:
            a, b, region = key
            beta = _beta(phys.beta_interface, region)
            label = f"[{a}|{b}{'' if region is None else ':' + region}]"
            nets = (networks[a], networks[b])
            if preset == "dg":
                for part in ("consistency", "penalty"):
                    terms.append(EnergyTerm(
                        "dg_interface", ("interface",) + key, nets, name=f"dg_interface_{part}{label}",
                        coef=phys.flux_scale * phys.coef[a], coef_l=phys.flux_scale * phys.coef[b],
                        beta=beta, part=part))
            else:
                terms.append(EnergyTerm("coupling_penalty", ("interface",) + key, nets,
                                        name=f"coupling{label}", beta=beta))
    for key in plan.antiperiodic:
        a, b, region = key
        beta = _beta(phys.beta_antiperiodic, region)
        label = f"[{a}|{b}{'' if region is None else ':' + region}]"
        nets = (networks[a], networks[b])
        if preset == "dg":
            for part in ("consistency", "penalty"):
                terms.append(EnergyTerm(
                    "dg_antiperiodic", ("antiperiodic",) + key, nets,
                    name=f"dg_antiperiodic_{part}{label}",
                    coef=phys.flux_scale * phys.coef[a], coef_l=phys.flux_scale * phys.coef[b],
                    beta=beta, part=part))
        else:
            terms.append(EnergyTerm("antiperiodic_penalty", ("antiperiodic",) + key, nets,
                                    name=f"antiperiodic{label}", beta=beta))
    return terms


def write_history(path, history: np.ndarray, names: list[str] | None = None) -> None:
    """Loss history CSV: ``epoch,total_loss,term_0,...`` (one row per epoch)."""
    history = np.atleast_2d(np.asarray(history, dtype=float))
    n_terms = history.shape[1] - 1 if history.size else 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["epoch", "total_loss"] + [f"term_{i}" for i in range(n_terms)])
        for k, row in enumerate(history if history.size else []):
            w.writerow([k] + [float(v) for v in row])
    if names is not None:
        with open(str(path) + ".terms", "w") as fh:
            fh.write("\n".join(f"term_{i},{n}" for i, n in enumerate(names)) + "\n")
