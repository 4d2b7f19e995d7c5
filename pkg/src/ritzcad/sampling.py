"""Sobol quasi-Monte-Carlo samples projected onto NURBS patches.

Every sample carries its importance weight (the Jacobian determinant for
interior points, the curve speed for edge points) and a quadrature weight
that already includes the 1/count normalisation of its patch or edge, so an
integral over any union of patches is simply ``sum(quad * g(x))``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .geometry import (
    GEOM_TOL, AntiperiodicPair, GeometryError, Interface, MultiPatchDomain, Patch,
)

_BITS = 32


def _direction_numbers(dim: int) -> np.ndarray:
    """Direction integers v_k * 2**32 for the first two Sobol coordinates."""
    if dim == 0:
        m = [1] * _BITS
    elif dim == 1:
        # primitive polynomial x + 1 (s=1, a=0), initial m_1 = 1
        m = [1]
        for _ in range(_BITS - 1):
            m.append((2 * m[-1]) ^ m[-1])
    else:
        raise ValueError("only dimensions 1 and 2 are tabulated")
    return np.array([mk << (_BITS - 1 - k) for k, mk in enumerate(m)], dtype=np.uint64)


def sobol(dim: int, count: int, skip: int = 1) -> np.ndarray:
    """Unscrambled Sobol points ``skip .. skip+count-1`` (Gray-code order), shape (count, dim)."""
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    if count < 1:
        raise ValueError("count must be >= 1")
    idx = np.arange(skip, skip + count, dtype=np.uint64)
    gray = idx ^ (idx >> np.uint64(1))
    out = np.zeros((count, dim))
    for d in range(dim):
        v = _direction_numbers(d)
        acc = np.zeros(count, dtype=np.uint64)
        for k in range(_BITS):
            bit = (gray >> np.uint64(k)) & np.uint64(1)
            acc ^= bit * v[k]
        out[:, d] = acc.astype(float) / 2.0**_BITS
    return out


@dataclass
class InteriorSamples:
    patch: np.ndarray
    y: np.ndarray
    x: np.ndarray
    weight: np.ndarray
    quad: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class EdgeSamples:
    patch: np.ndarray
    edge: np.ndarray
    xi: np.ndarray
    x: np.ndarray
    speed: np.ndarray
    quad: np.ndarray
    normal: np.ndarray

    def __len__(self):
        return len(self.x)


@dataclass
class PairedSamples:
    """Point-by-point pairs across an interface or a pair of anti-periodic edges.

    ``side_k`` carries the weights and the outward normal used by the
    operators; ``side_l`` holds the partner points (the image under the
    symmetry map for anti-periodic pairs).
    """

    side_k: EdgeSamples
    side_l: EdgeSamples
    kind: str = "interface"
    symmetry: np.ndarray | None = None

    def __len__(self):
        return len(self.side_k)

    @property
    def quad(self):
        return self.side_k.quad

    @property
    def speed(self):
        return self.side_k.speed


def _cat(items, cls):
    items = list(items)
    if not items:
        raise ValueError("nothing to concatenate")
    return cls(**{
        f: np.concatenate([getattr(it, f) for it in items])
        for f in cls.__dataclass_fields__
    })


def concat_interior(items: Iterable[InteriorSamples]) -> InteriorSamples:
    return _cat(items, InteriorSamples)


def concat_edges(items: Iterable[EdgeSamples]) -> EdgeSamples:
    return _cat(items, EdgeSamples)


def concat_pairs(items: Iterable[PairedSamples]) -> PairedSamples:
    items = list(items)
    side_k = concat_edges(p.side_k for p in items)
    side_l = concat_edges(p.side_l for p in items)
    if all(p.side_l.x is p.side_k.x for p in items):
        side_l.x = side_k.x
    return PairedSamples(side_k, side_l, items[0].kind, items[0].symmetry)


def sample_interior(patch: Patch, count: int, skip: int = 1, patch_index: int = 0) -> InteriorSamples:
    y = sobol(2, count, skip)
    x = patch.evaluate(y)
    phi = np.abs(patch.jacobian_det(y))
    return InteriorSamples(np.full(count, patch_index), y, x, phi, phi / count)


def sample_edge(patch: Patch, edge: str, count: int, skip: int = 1, patch_index: int = 0) -> EdgeSamples:
    xi = sobol(1, count, skip)[:, 0]
    x, speed, normal = patch.edge_frame(edge, xi)
    return EdgeSamples(
        np.full(count, patch_index), np.full(count, edge, dtype=object), xi, x, speed,
        speed / count, normal,
    )


def sample_interface(domain: MultiPatchDomain, interface: Interface, count: int,
                     skip: int = 1, geom_tol: float = GEOM_TOL) -> PairedSamples:
    k, l = interface.k, interface.l
    side_k = sample_edge(domain.patches[k], interface.edge_k, count, skip, k)
    xi_l = interface.partner_xi(side_k.xi)
    x_l, speed_l, n_l = domain.patches[l].edge_frame(interface.edge_l, xi_l)
    if np.max(np.linalg.norm(x_l - side_k.x, axis=1)) > geom_tol:
        raise GeometryError(f"interface {interface} sides do not coincide")
    # both sides share one point array, so a shared network sees identical inputs
    side_l = EdgeSamples(
        np.full(count, l), np.full(count, interface.edge_l, dtype=object), xi_l, side_k.x,
        side_k.speed, side_k.quad, n_l,
    )
    return PairedSamples(side_k, side_l, "interface")


def rotation(angle: float) -> np.ndarray:
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


def reflection_x() -> np.ndarray:
    return np.array([[-1.0, 0.0], [0.0, 1.0]])


def sample_antiperiodic(domain: MultiPatchDomain, pair: AntiperiodicPair, count: int,
                        skip: int = 1, geom_tol: float = GEOM_TOL) -> PairedSamples:
    T = domain.symmetry
    if T is None:
        raise GeometryError("domain has no symmetry map")
    side_k = sample_edge(domain.patches[pair.left], pair.edge_left, count, skip, pair.left)
    xi_r = 1.0 - side_k.xi if pair.reversed else side_k.xi.copy()
    x_r, speed_r, n_r = domain.patches[pair.right].edge_frame(pair.edge_right, xi_r)
    if np.max(np.linalg.norm(side_k.x @ T.T - x_r, axis=1)) > geom_tol:
        raise GeometryError(f"anti-periodic pair {pair} is not mapped by the symmetry")
    side_l = EdgeSamples(
        np.full(count, pair.right), np.full(count, pair.edge_right, dtype=object), xi_r,
        x_r, side_k.speed, side_k.quad, n_r,
    )
    return PairedSamples(side_k, side_l, "antiperiodic", T)


def allocate(total: int, sizes, minimum: int = 1) -> np.ndarray:
    """Split ``total`` into integer counts proportional to ``sizes`` (largest remainder)."""
    sizes = np.asarray(sizes, dtype=float)
    n = len(sizes)
    if n == 0:
        return np.zeros(0, dtype=int)
    minimum = min(minimum, total // n) if total >= n else 0
    rest = total - minimum * n
    share = rest * sizes / sizes.sum()
    counts = np.floor(share).astype(int)
    order = np.argsort(-(share - counts), kind="stable")
    counts[order[: rest - counts.sum()]] += 1
    return counts + minimum


@dataclass
class Budgets:
    interior: int = 4000
    dirichlet: int = 1200
    neumann: int = 1200
    interface: int = 600
    antiperiodic: int = 0
    min_per_patch: int = 8

    def scaled(self, factor: float) -> "Budgets":
        return Budgets(*(max(1, int(round(getattr(self, f) * factor)))
                         for f in ("interior", "dirichlet", "neumann", "interface", "antiperiodic")),
                       self.min_per_patch)


@dataclass
class SamplePlan:
    interior: dict = field(default_factory=dict)      # subdomain -> InteriorSamples
    boundary: dict = field(default_factory=dict)      # (tag, subdomain, region) -> EdgeSamples
    interfaces: dict = field(default_factory=dict)    # (sub_k, sub_l, region) -> PairedSamples
    antiperiodic: dict = field(default_factory=dict)  # (sub_l, sub_r, region) -> PairedSamples
    per_patch: dict = field(default_factory=dict)     # patch index -> InteriorSamples

    def boundary_set(self, tag: str, subdomain: str | None = None, region: str | None = None):
        """Union of boundary samples matching the filters (None = any)."""
        items = [s for (t, sub, reg), s in self.boundary.items()
                 if t == tag and subdomain in (None, sub) and region in (None, reg)]
        return concat_edges(items) if items else None

    def counts(self) -> dict:
        return {
            "interior": sum(len(s) for s in self.interior.values()),
            "boundary": {f"{t}:{s}:{r}": len(v) for (t, s, r), v in self.boundary.items()},
            "interfaces": sum(len(s) for s in self.interfaces.values()),
            "antiperiodic": sum(len(s) for s in self.antiperiodic.values()),
        }


def _edge_length(patch: Patch, edge: str) -> float:
    g, w = np.polynomial.legendre.leggauss(32)
    return float(np.sum(0.5 * w * patch.edge_curve(edge).speed(0.5 * (g + 1))))


def build_plan(domain: MultiPatchDomain, budgets: Budgets, skip: int = 1,
               tags: Iterable[str] = ("dirichlet", "neumann")) -> SamplePlan:
    """Allocate each budget over patches/edges in proportion to area/length and sample."""
    P = domain.patches
    plan = SamplePlan()
    counts = allocate(budgets.interior, [p.area() for p in P], budgets.min_per_patch)
    by_sub: dict[str, list] = {}
    for k, (p, c) in enumerate(zip(P, counts)):
        if c == 0:
            continue
        s = sample_interior(p, int(c), skip, k)
        plan.per_patch[k] = s
        by_sub.setdefault(p.subdomain, []).append(s)
    plan.interior = {sub: concat_interior(v) for sub, v in by_sub.items()}

    for tag in tags:
        edges = domain.boundary_edges(tag)
        if not edges:
            continue
        total = getattr(budgets, tag)
        counts = allocate(total, [_edge_length(P[k], e) for k, e in edges], budgets.min_per_patch)
        groups: dict = {}
        for (k, e), c in zip(edges, counts):
            if c == 0:
                continue
            groups.setdefault((tag, P[k].subdomain, P[k].region), []).append(
                sample_edge(P[k], e, int(c), skip, k))
        plan.boundary.update({key: concat_edges(v) for key, v in groups.items()})

    ifaces = domain.interfaces_between_subdomains()
    if ifaces and budgets.interface > 0:
        counts = allocate(budgets.interface, [_edge_length(P[i.k], i.edge_k) for i in ifaces],
                          budgets.min_per_patch)
        groups = {}
        for i, c in zip(ifaces, counts):
            if c == 0:
                continue
            a, b = P[i.k].subdomain, P[i.l].subdomain
            # canonical orientation: side k is the subdomain listed first
            order = domain.subdomains()
            if order.index(a) > order.index(b):
                i = Interface(i.l, i.edge_l, i.k, i.edge_k, i.reversed)
                a, b = b, a
            groups.setdefault((a, b, P[i.k].region), []).append(
                sample_interface(domain, i, int(c), skip))
        plan.interfaces = {key: concat_pairs(v) for key, v in groups.items()}

    if domain.antiperiodic and budgets.antiperiodic > 0:
        pairs = domain.antiperiodic
        counts = allocate(budgets.antiperiodic,
                          [_edge_length(P[a.left], a.edge_left) for a in pairs],
                          budgets.min_per_patch)
        groups = {}
        for a, c in zip(pairs, counts):
            if c == 0:
                continue
            key = (P[a.left].subdomain, P[a.right].subdomain, P[a.left].region)
            groups.setdefault(key, []).append(sample_antiperiodic(domain, a, int(c), skip))
        plan.antiperiodic = {key: concat_pairs(v) for key, v in groups.items()}
    return plan


def write_interior_csv(path, plan: SamplePlan) -> int:
    """Write ``patch,k,y1,y2,x1,x2,weight`` rows; returns the row count."""
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["patch", "k", "y1", "y2", "x1", "x2", "weight"])
        for pidx in sorted(plan.per_patch):
            s = plan.per_patch[pidx]
            for k in range(len(s)):
                w.writerow([pidx, k, *s.y[k].tolist(), *s.x[k].tolist(), float(s.weight[k])])
                rows += 1
    return rows


def write_edge_csv(path, plan: SamplePlan) -> int:
    """Boundary, interface and anti-periodic samples: ``set,patch,edge,k,xi,x1,x2,weight``."""
    rows = 0
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["set", "patch", "edge", "k", "xi", "x1", "x2", "weight"])
        sets = [(":".join(map(str, key)), s) for key, s in plan.boundary.items()]
        for name, d in (("interface", plan.interfaces), ("antiperiodic", plan.antiperiodic)):
            for key, pair in d.items():
                sets.append((name + ":" + "|".join(map(str, key)), pair.side_k))
        for name, s in sets:
            for k in range(len(s)):
                w.writerow([name, int(s.patch[k]), s.edge[k], k, float(s.xi[k]),
                            *s.x[k].tolist(), float(s.speed[k])])
                rows += 1
    return rows
