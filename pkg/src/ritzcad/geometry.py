"""B-spline / NURBS kernel and multi-patch domains.

Indices are 0-based throughout. Surfaces map the reference square
``[0,1]^2`` to a physical patch; the control net is stored with shape
``(n_u, n_v, 2)`` and weights ``(n_u, n_v)``. Edges are named by where they
sit in the reference square: ``south`` (v=0), ``north`` (v=1), ``west`` (u=0)
and ``east`` (u=1); each is parameterised by the free coordinate in increasing
order.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

DET_FLOOR = 1e-10
GEOM_TOL = 1e-9

EDGES = ("south", "east", "north", "west")
EDGE_TAGS = (
    "dirichlet", "neumann", "antiperiodic_left", "antiperiodic_right",
    "interface", "interior-free",
)


class GeometryError(ValueError):
    pass


class DegenerateMapError(GeometryError):
    pass


class AmbiguousInterfaceError(GeometryError):
    pass


@dataclass(frozen=True)
class KnotVector:
    values: tuple[float, ...]
    degree: int

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        p = self.degree
        if p < 0:
            raise ValueError("degree must be >= 0")
        if v.size < 2 * (p + 1):
            raise ValueError("too few knots for the degree")
        if np.any(np.diff(v) < 0):
            raise ValueError("knots must be nondecreasing")
        if v[0] < 0 or v[-1] > 1:
            raise ValueError("knots must lie in [0, 1]")
        if np.any(v[: p + 1] != v[0]) or np.any(v[-p - 1:] != v[-1]):
            raise ValueError("knot vector must be clamped (ends repeated p+1 times)")
        object.__setattr__(self, "values", tuple(float(x) for x in v))

    @classmethod
    def clamped(cls, degree: int, interior=()) -> "KnotVector":
        return cls((0.0,) * (degree + 1) + tuple(interior) + (1.0,) * (degree + 1), degree)

    @property
    def n(self) -> int:
        """Number of basis functions."""
        return len(self.values) - self.degree - 1

    def array(self) -> np.ndarray:
        return np.asarray(self.values)


def _ratio(num, den):
    # 0/0 convention of the recursion: a term with a zero-length span vanishes
    return 0.0 if den == 0 else num / den


def bspline_basis(knots: KnotVector, i: int, p: int, xi: float) -> float:
    """B_{i,p}(xi) by the Cox-de-Boor recursion (reference implementation)."""
    t = knots.values
    if not 0 <= i < len(t) - p - 1:
        raise IndexError(f"basis index {i} out of range for degree {p}")
    if p == 0:
        if t[i] <= xi < t[i + 1]:
            return 1.0
        # closed right end: xi == last knot belongs to the last nonempty span
        if xi == t[-1] and t[i] < t[i + 1] == t[-1]:
            return 1.0
        return 0.0
    left = _ratio(xi - t[i], t[i + p] - t[i]) * bspline_basis(knots, i, p - 1, xi)
    right = _ratio(t[i + p + 1] - xi, t[i + p + 1] - t[i + 1]) * bspline_basis(
        knots, i + 1, p - 1, xi
    )
    return left + right


def nurbs_basis(knots: KnotVector, weights, i: int, p: int, xi: float) -> float:
    weights = np.asarray(weights, dtype=float)
    den = sum(weights[j] * bspline_basis(knots, j, p, xi) for j in range(knots.n))
    return weights[i] * bspline_basis(knots, i, p, xi) / den


def basis_matrix(knots: KnotVector, xi) -> tuple[np.ndarray, np.ndarray]:
    """All basis values and first derivatives at ``xi``: two (len(xi), n) arrays."""
    t = knots.array()
    p = knots.degree
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    m = len(t) - 1
    B = np.zeros((xi.size, m))
    for i in range(m):
        B[:, i] = (t[i] <= xi) & (xi < t[i + 1])
    last = np.max(np.nonzero(t[:-1] < t[1:])[0])
    B[xi >= t[-1], last] = 1.0
    dB = np.zeros_like(B)
    for k in range(1, p + 1):
        nb = np.zeros((xi.size, m - k))
        nd = np.zeros_like(nb)
        for i in range(m - k):
            d1 = t[i + k] - t[i]
            d2 = t[i + k + 1] - t[i + 1]
            if d1 > 0:
                nb[:, i] += (xi - t[i]) / d1 * B[:, i]
                nd[:, i] += k / d1 * B[:, i]
            if d2 > 0:
                nb[:, i] += (t[i + k + 1] - xi) / d2 * B[:, i + 1]
                nd[:, i] -= k / d2 * B[:, i + 1]
        B, dB = nb, nd
    return B, dB


@dataclass
class NurbsCurve:
    knots: KnotVector
    control_points: np.ndarray  # (n, 2)
    weights: np.ndarray  # (n,)

    def __post_init__(self):
        self.control_points = np.asarray(self.control_points, dtype=float).reshape(-1, 2)
        self.weights = np.asarray(self.weights, dtype=float)
        if len(self.control_points) != self.knots.n or len(self.weights) != self.knots.n:
            raise ValueError("need one control point and weight per basis function")
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")

    def evaluate(self, xi) -> np.ndarray:
        return self.derivatives(xi)[0]

    def derivatives(self, xi) -> tuple[np.ndarray, np.ndarray]:
        B, dB = basis_matrix(self.knots, xi)
        w = self.weights
        W = B @ w
        dW = dB @ w
        A = B @ (w[:, None] * self.control_points)
        dA = dB @ (w[:, None] * self.control_points)
        C = A / W[:, None]
        dC = (dA - C * dW[:, None]) / W[:, None]
        return C, dC

    def speed(self, xi) -> np.ndarray:
        return np.linalg.norm(self.derivatives(xi)[1], axis=1)


def curve_speed(curve: NurbsCurve, xi) -> np.ndarray:
    return curve.speed(xi)


@dataclass
class Patch:
    knots_u: KnotVector
    knots_v: KnotVector
    control_points: np.ndarray  # (n_u, n_v, 2)
    weights: np.ndarray  # (n_u, n_v)
    material: str = "default"
    edge_tags: dict = field(default_factory=dict)
    subdomain: str | None = None
    region: str | None = None

    def __post_init__(self):
        nu, nv = self.knots_u.n, self.knots_v.n
        self.control_points = np.asarray(self.control_points, dtype=float).reshape(nu, nv, 2)
        self.weights = np.asarray(self.weights, dtype=float).reshape(nu, nv)
        if np.any(self.weights <= 0):
            raise ValueError("weights must be positive")
        for e, tag in self.edge_tags.items():
            if e not in EDGES:
                raise ValueError(f"unknown edge {e!r}")
            if tag not in EDGE_TAGS:
                raise ValueError(f"unknown edge tag {tag!r}")
        if self.subdomain is None:
            self.subdomain = self.material

    def _eval(self, y):
        y = np.asarray(y, dtype=float).reshape(-1, 2)
        Bu, dBu = basis_matrix(self.knots_u, y[:, 0])
        Bv, dBv = basis_matrix(self.knots_v, y[:, 1])
        w = self.weights
        wP = w[..., None] * self.control_points
        W = np.einsum("mi,mj,ij->m", Bu, Bv, w)
        Wu = np.einsum("mi,mj,ij->m", dBu, Bv, w)
        Wv = np.einsum("mi,mj,ij->m", Bu, dBv, w)
        A = np.einsum("mi,mj,ijd->md", Bu, Bv, wP)
        Au = np.einsum("mi,mj,ijd->md", dBu, Bv, wP)
        Av = np.einsum("mi,mj,ijd->md", Bu, dBv, wP)
        F = A / W[:, None]
        Fu = (Au - F * Wu[:, None]) / W[:, None]
        Fv = (Av - F * Wv[:, None]) / W[:, None]
        return F, Fu, Fv

    def evaluate(self, y) -> np.ndarray:
        return self._eval(y)[0]

    def jacobian(self, y) -> np.ndarray:
        """(M, 2, 2) array J[m, a, b] = dF_a / dy_b."""
        _, Fu, Fv = self._eval(y)
        return np.stack([Fu, Fv], axis=2)

    def jacobian_det(self, y, check: bool = True) -> np.ndarray:
        _, Fu, Fv = self._eval(y)
        det = Fu[:, 0] * Fv[:, 1] - Fu[:, 1] * Fv[:, 0]
        if check and np.any(np.abs(det) < DET_FLOOR):
            raise DegenerateMapError("Jacobian determinant below floor")
        return det

    def edge_params(self, edge: str, xi) -> np.ndarray:
        xi = np.atleast_1d(np.asarray(xi, dtype=float))
        zeros, ones = np.zeros_like(xi), np.ones_like(xi)
        return {
            "south": np.column_stack([xi, zeros]),
            "north": np.column_stack([xi, ones]),
            "west": np.column_stack([zeros, xi]),
            "east": np.column_stack([ones, xi]),
        }[edge]

    def edge_curve(self, edge: str) -> NurbsCurve:
        if edge == "south":
            return NurbsCurve(self.knots_u, self.control_points[:, 0], self.weights[:, 0])
        if edge == "north":
            return NurbsCurve(self.knots_u, self.control_points[:, -1], self.weights[:, -1])
        if edge == "west":
            return NurbsCurve(self.knots_v, self.control_points[0], self.weights[0])
        if edge == "east":
            return NurbsCurve(self.knots_v, self.control_points[-1], self.weights[-1])
        raise ValueError(f"unknown edge {edge!r}")

    def orientation(self) -> float:
        """Sign of the Jacobian determinant (sampled at the patch centre)."""
        return float(np.sign(self.jacobian_det([[0.5, 0.5]], check=False)[0]))

    def edge_frame(self, edge: str, xi):
        """Points, speeds |C'| and outward unit normals along an edge."""
        C, dC = self.edge_curve(edge).derivatives(xi)
        speed = np.linalg.norm(dC, axis=1)
        t = dC / speed[:, None]
        n = np.column_stack([t[:, 1], -t[:, 0]])
        if edge in ("north", "west"):
            n = -n
        return C, speed, n * self.orientation()

    def area(self, n: int = 64) -> float:
        g, w = np.polynomial.legendre.leggauss(n)
        g, w = 0.5 * (g + 1), 0.5 * w
        Y = np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T
        W = np.outer(w, w).ravel()
        return float(np.sum(W * np.abs(self.jacobian_det(Y, check=False))))

    def bounding_box(self) -> tuple[np.ndarray, np.ndarray]:
        P = self.control_points.reshape(-1, 2)
        return P.min(axis=0), P.max(axis=0)


def surface_eval(patch: Patch, y) -> np.ndarray:
    return patch.evaluate(y)


def jacobian(patch: Patch, y) -> np.ndarray:
    return patch.jacobian(y)


def jacobian_det(patch: Patch, y) -> np.ndarray:
    return patch.jacobian_det(y)


def edge_curve(patch: Patch, edge: str) -> NurbsCurve:
    return patch.edge_curve(edge)


@dataclass(frozen=True)
class Interface:
    k: int
    edge_k: str
    l: int
    edge_l: str
    reversed: bool

    def partner_xi(self, xi):
        return 1.0 - xi if self.reversed else xi


@dataclass(frozen=True)
class AntiperiodicPair:
    left: int
    edge_left: str
    right: int
    edge_right: str
    reversed: bool


@dataclass
class MultiPatchDomain:
    patches: list[Patch]
    interfaces: list[Interface] = field(default_factory=list)
    antiperiodic: list[AntiperiodicPair] = field(default_factory=list)
    symmetry: np.ndarray | None = None  # 2x2 map taking the left boundary onto the right

    def subdomains(self) -> list[str]:
        seen = []
        for p in self.patches:
            if p.subdomain not in seen:
                seen.append(p.subdomain)
        return seen

    def boundary_edges(self, tag: str) -> list[tuple[int, str]]:
        return [
            (k, e) for k, p in enumerate(self.patches) for e in EDGES
            if p.edge_tags.get(e) == tag
        ]

    def interfaces_between_subdomains(self) -> list[Interface]:
        P = self.patches
        return [i for i in self.interfaces if P[i.k].subdomain != P[i.l].subdomain]

    def locate(self, points, tol: float = 1e-9, max_iter: int = 50):
        """Patch index and reference coordinates for each physical point.

        Unlocated points get patch index -1.
        """
        X = np.asarray(points, dtype=float).reshape(-1, 2)
        idx = np.full(len(X), -1)
        Y = np.full((len(X), 2), np.nan)
        g = np.linspace(0.05, 0.95, 7)
        seeds = np.array(np.meshgrid(g, g, indexing="ij")).reshape(2, -1).T
        for k, patch in enumerate(self.patches):
            todo = np.nonzero(idx < 0)[0]
            if todo.size == 0:
                break
            lo, hi = patch.bounding_box()
            pad = 1e-9 + 1e-9 * np.max(np.abs(hi - lo))
            inside = np.all((X[todo] >= lo - pad) & (X[todo] <= hi + pad), axis=1)
            todo = todo[inside]
            if todo.size == 0:
                continue
            S = patch.evaluate(seeds)
            d = np.linalg.norm(X[todo, None, :] - S[None], axis=2)
            y = seeds[np.argmin(d, axis=1)].copy()
            for _ in range(max_iter):
                F, Fu, Fv = patch._eval(y)
                r = X[todo] - F
                det = Fu[:, 0] * Fv[:, 1] - Fu[:, 1] * Fv[:, 0]
                dy0 = (Fv[:, 1] * r[:, 0] - Fv[:, 0] * r[:, 1]) / det
                dy1 = (-Fu[:, 1] * r[:, 0] + Fu[:, 0] * r[:, 1]) / det
                y = np.clip(y + np.column_stack([dy0, dy1]), 0.0, 1.0)
            F = patch.evaluate(np.clip(y, 0, 1))
            ok = (np.all((y >= -1e-7) & (y <= 1 + 1e-7), axis=1)
                  & (np.linalg.norm(F - X[todo], axis=1) < max(tol, 1e-9) * 10))
            idx[todo[ok]] = k
            Y[todo[ok]] = np.clip(y[ok], 0, 1)
        return idx, Y


def _edge_samples(patch: Patch, edge: str, n: int = 7) -> np.ndarray:
    return patch.edge_curve(edge).evaluate(np.linspace(0, 1, n))


def _match_edges(A: np.ndarray, B: np.ndarray, tol: float):
    """Return None, 'parallel' or 'reversed' for two sampled edges."""
    if np.max(np.linalg.norm(A - B, axis=1)) <= tol:
        return "parallel"
    if np.max(np.linalg.norm(A - B[::-1], axis=1)) <= tol:
        return "reversed"
    return None


def match_interfaces(patches: list[Patch], geom_tol: float = GEOM_TOL) -> MultiPatchDomain:
    """Pair coincident edges of distinct patches into interfaces.

    Edges tagged as a physical boundary are skipped. An edge that coincides
    with more than one partner raises :class:`AmbiguousInterfaceError`.
    """
    boundary = {"dirichlet", "neumann", "antiperiodic_left", "antiperiodic_right"}
    cand = []
    for k, p in enumerate(patches):
        for e in EDGES:
            if p.edge_tags.get(e) in boundary:
                continue
            S = _edge_samples(p, e)
            if np.linalg.norm(S[-1] - S[0]) <= geom_tol and np.ptp(S, axis=0).max() <= geom_tol:
                continue
            cand.append((k, e, S))
    interfaces = []
    partners: dict[tuple[int, str], int] = {}
    for a in range(len(cand)):
        ka, ea, Sa = cand[a]
        for b in range(a + 1, len(cand)):
            kb, eb, Sb = cand[b]
            if ka == kb:
                continue
            how = _match_edges(Sa, Sb, geom_tol)
            if how is None:
                continue
            for key in ((ka, ea), (kb, eb)):
                partners[key] = partners.get(key, 0) + 1
                if partners[key] > 1:
                    raise AmbiguousInterfaceError(f"edge {key} matches more than one partner")
            interfaces.append(Interface(ka, ea, kb, eb, how == "reversed"))
    return MultiPatchDomain(list(patches), interfaces)


def match_antiperiodic(domain: MultiPatchDomain, symmetry: np.ndarray,
                       geom_tol: float = GEOM_TOL) -> MultiPatchDomain:
    """Pair every ``antiperiodic_left`` edge with its image on an ``antiperiodic_right`` edge."""
    T = np.asarray(symmetry, dtype=float)
    lefts = domain.boundary_edges("antiperiodic_left")
    rights = domain.boundary_edges("antiperiodic_right")
    pairs = []
    for k, e in lefts:
        S = _edge_samples(domain.patches[k], e) @ T.T
        found = []
        for l, f in rights:
            how = _match_edges(S, _edge_samples(domain.patches[l], f), geom_tol)
            if how is not None:
                found.append(AntiperiodicPair(k, e, l, f, how == "reversed"))
        if len(found) != 1:
            raise GeometryError(
                f"anti-periodic edge {(k, e)} has {len(found)} partners under the symmetry map"
            )
        pairs.append(found[0])
    domain.antiperiodic = pairs
    domain.symmetry = T
    return domain


# -- constructors ----------------------------------------------------------

@dataclass(frozen=True)
class Quadratic:
    """Degree-2 rational curve given by three homogeneous control points."""

    points: tuple
    weights: tuple

    def reversed(self) -> "Quadratic":
        return Quadratic(tuple(self.points[::-1]), tuple(self.weights[::-1]))

    def curve(self) -> NurbsCurve:
        return NurbsCurve(KnotVector.clamped(2), np.array(self.points), np.array(self.weights))


def arc(center, radius: float, a0: float, a1: float) -> Quadratic:
    """Circular arc from angle a0 to a1 (radians, |a1 - a0| < pi)."""
    c = np.asarray(center, dtype=float)
    half = 0.5 * (a1 - a0)
    mid = 0.5 * (a0 + a1)
    p0 = c + radius * np.array([np.cos(a0), np.sin(a0)])
    p2 = c + radius * np.array([np.cos(a1), np.sin(a1)])
    p1 = c + radius / np.cos(half) * np.array([np.cos(mid), np.sin(mid)])
    return Quadratic((tuple(p0), tuple(p1), tuple(p2)), (1.0, float(np.cos(half)), 1.0))


def segment(p0, p1, mid_weight: float = 1.0) -> Quadratic:
    p0, p1 = np.asarray(p0, dtype=float), np.asarray(p1, dtype=float)
    return Quadratic((tuple(p0), tuple(0.5 * (p0 + p1)), tuple(p1)), (1.0, mid_weight, 1.0))


def ruled_patch(bottom: Quadratic, top: Quadratic, **kw) -> Patch:
    """Degree (2, 1) patch spanning ``bottom`` (v=0) and ``top`` (v=1)."""
    P = np.stack([np.array(bottom.points), np.array(top.points)], axis=1)
    W = np.stack([np.array(bottom.weights), np.array(top.weights)], axis=1)
    return Patch(KnotVector.clamped(2), KnotVector.clamped(1), P, W, **kw)


def bilinear_patch(p00, p10, p01, p11, **kw) -> Patch:
    P = np.array([[p00, p01], [p10, p11]], dtype=float)
    return Patch(KnotVector.clamped(1), KnotVector.clamped(1), P, np.ones((2, 2)), **kw)


def identity_patch(**kw) -> Patch:
    return bilinear_patch((0, 0), (1, 0), (0, 1), (1, 1), **kw)


def affine_patch(A, c=(0.0, 0.0), **kw) -> Patch:
    A, c = np.asarray(A, dtype=float), np.asarray(c, dtype=float)
    corners = [c + A @ np.array(y, dtype=float) for y in ((0, 0), (1, 0), (0, 1), (1, 1))]
    return bilinear_patch(*corners, **kw)


def quarter_annulus(r_inner: float, r_outer: float, **kw) -> Patch:
    """Quarter annulus in the first quadrant; u runs outward, v counter-clockwise."""
    inner, outer = arc((0, 0), r_inner, 0.0, np.pi / 2), arc((0, 0), r_outer, 0.0, np.pi / 2)
    P = np.stack([np.array(inner.points), np.array(outer.points)], axis=0)
    W = np.stack([np.array(inner.weights), np.array(outer.weights)], axis=0)
    return Patch(KnotVector.clamped(1), KnotVector.clamped(2), P, W, **kw)


def quarter_circle(radius: float = 1.0) -> NurbsCurve:
    return arc((0, 0), radius, 0.0, np.pi / 2).curve()


# -- patch file format -------------------------------------------------------

def patch_to_json(p: Patch) -> dict:
    nu, nv = p.knots_u.n, p.knots_v.n
    rows = []
    for j in range(nv):
        for i in range(nu):
            x, y = p.control_points[i, j]
            rows.append([float(x), float(y), float(p.weights[i, j])])
    doc = {
        "degree_u": p.knots_u.degree,
        "degree_v": p.knots_v.degree,
        "knots_u": list(p.knots_u.values),
        "knots_v": list(p.knots_v.values),
        "control_points": rows,
        "material": p.material,
        "edges": dict(p.edge_tags),
    }
    if p.subdomain != p.material:
        doc["subdomain"] = p.subdomain
    if p.region is not None:
        doc["region"] = p.region
    return doc


def patch_from_json(doc: dict) -> Patch:
    ku = KnotVector(tuple(doc["knots_u"]), int(doc["degree_u"]))
    kv = KnotVector(tuple(doc["knots_v"]), int(doc["degree_v"]))
    rows = np.asarray(doc["control_points"], dtype=float)
    if rows.shape != (ku.n * kv.n, 3):
        raise GeometryError(
            f"expected {ku.n * kv.n} control points [x, y, w], got shape {rows.shape}"
        )
    # rows run over u fastest: index j * n_u + i
    grid = rows.reshape(kv.n, ku.n, 3).transpose(1, 0, 2)
    return Patch(
        ku, kv, grid[..., :2], grid[..., 2],
        material=doc.get("material", "default"),
        edge_tags=dict(doc.get("edges", {})),
        subdomain=doc.get("subdomain"),
        region=doc.get("region"),
    )


def save_patches(path, patches: list[Patch]) -> None:
    Path(path).write_text(json.dumps({"patches": [patch_to_json(p) for p in patches]}, indent=1))


def load_patches(path) -> list[Patch]:
    doc = json.loads(Path(path).read_text())
    return [patch_from_json(d) for d in doc["patches"]]
