"""Gauss quadrature on segments, rectangles, triangles, and on the chord-split
sub-polygons of cut elements.

Reference regions: segment [0,1], square [0,1]^2, triangle (0,0)-(1,0)-(0,1).
All rules have strictly positive weights; weights sum to the measure of the
region they cover.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .errors import DegeneratePolygon, UnsupportedDegree

MIN_DEGREE = 1
MAX_DEGREE = 10


@dataclass(frozen=True)
class QuadratureRule:
    """Point set, positive weights, and the polynomial degree it integrates exactly."""

    points: np.ndarray   # (n,) for reference segments, (n, 2) otherwise
    weights: np.ndarray  # (n,)
    degree: int

    @property
    def n_points(self):
        return self.weights.size


def _check_degree(degree):
    degree = int(degree)
    if not MIN_DEGREE <= degree <= MAX_DEGREE:
        raise UnsupportedDegree(
            f"quadrature degree must be in [{MIN_DEGREE}, {MAX_DEGREE}], got {degree}")
    return degree


def _gauss01(n):
    """Gauss-Legendre nodes/weights shifted to [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


@lru_cache(maxsize=None)
def segment_rule(degree):
    """Gauss-Legendre rule on the reference segment [0, 1]."""
    degree = _check_degree(degree)
    x, w = _gauss01(degree // 2 + 1)
    return QuadratureRule(x, w, degree)


@lru_cache(maxsize=None)
def rect_rule(degree):
    """Tensor Gauss-Legendre rule on the reference square [0, 1]^2."""
    degree = _check_degree(degree)
    x, w = _gauss01(degree // 2 + 1)
    X, Y = np.meshgrid(x, x, indexing="ij")
    W = np.outer(w, w)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, W.ravel(), degree)


@lru_cache(maxsize=None)
def _collapsed_triangle_rule(degree):
    """Conical-product rule on the reference triangle (not symmetric)."""
    degree = _check_degree(degree)
    nu = (degree + 3) // 2   # integrand picks up one extra power of (1-u)
    nv = (degree + 2) // 2
    xu, wu = _gauss01(nu)
    xv, wv = _gauss01(nv)
    U, V = np.meshgrid(xu, xv, indexing="ij")
    X = U
    Y = V * (1.0 - U)
    W = np.outer(wu, wv) * (1.0 - U)
    pts = np.column_stack([X.ravel(), Y.ravel()])
    return QuadratureRule(pts, W.ravel(), degree)


@lru_cache(maxsize=None)
def triangle_rule(degree):
    """Symmetric positive rule on the reference triangle (0,0)-(1,0)-(0,1).

    The conical-product rule is symmetrized over the six affine symmetries of
    the triangle (barycentric permutations), which preserves exactness and
    keeps every weight positive.
    """
    base = _collapsed_triangle_rule(degree)
    lam = np.column_stack([1.0 - base.points[:, 0] - base.points[:, 1],
                           base.points[:, 0], base.points[:, 1]])
    pts, wts = [], []
    for perm in itertools.permutations(range(3)):
        lp = lam[:, perm]
        pts.append(np.column_stack([lp[:, 1], lp[:, 2]]))
        wts.append(base.weights / 6.0)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), degree)


# ---------------------------------------------------------------------------
# mapping helpers
# ---------------------------------------------------------------------------

def map_segment(rule, p0, p1):
    """Map a reference [0,1] rule onto the physical segment p0 -> p1."""
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    t = rule.points.reshape(-1, 1)
    pts = p0 + t * (p1 - p0)
    return pts, rule.weights * np.linalg.norm(p1 - p0)


def map_triangle(rule, tri):
    """Map a reference-triangle rule onto the physical triangle (3,2)."""
    tri = np.asarray(tri, float)
    J = np.column_stack([tri[1] - tri[0], tri[2] - tri[0]])
    det = abs(J[0, 0] * J[1, 1] - J[0, 1] * J[1, 0])
    pts = rule.points @ J.T + tri[0]
    return pts, rule.weights * det


def map_rect(rule, origin, hx, hy=None):
    """Map a reference-square rule onto an axis-aligned rectangle."""
    if hy is None:
        hy = hx
    pts = np.asarray(origin, float) + rule.points * np.array([hx, hy])
    return pts, rule.weights * (hx * hy)


# ---------------------------------------------------------------------------
# cut-element rules
# ---------------------------------------------------------------------------

def polygon_area(poly):
    """Signed shoelace area (positive for counterclockwise vertex order)."""
    poly = np.asarray(poly, float)
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)


def fan_triangles(poly):
    """Fan-triangulate a convex polygon from its first vertex."""
    poly = np.asarray(poly, float)
    return [np.array([poly[0], poly[i], poly[i + 1]]) for i in range(1, len(poly) - 1)]


def _subdivide(tri):
    m01 = 0.5 * (tri[0] + tri[1])
    m12 = 0.5 * (tri[1] + tri[2])
    m20 = 0.5 * (tri[2] + tri[0])
    return [np.array([tri[0], m01, m20]), np.array([m01, tri[1], m12]),
            np.array([m20, m12, tri[2]]), np.array([m01, m12, m20])]


def split_polygon_rule(poly, degree, refine=0, symmetric=False):
    """Quadrature over a convex polygon with 3-5 vertices.

    Fan-triangulates from the first vertex, optionally subdivides each fan
    triangle `refine` times (4 children per level), and maps a triangle rule
    onto every piece. Weights sum to the polygon area.
    """
    poly = np.asarray(poly, float)
    area = polygon_area(poly)
    if area < 0:
        poly = poly[::-1]
        area = -area
    scale = max(np.ptp(poly[:, 0]), np.ptp(poly[:, 1]), 1e-300)
    if area < 1e-14 * scale * scale:
        raise DegeneratePolygon(f"polygon area {area:.3e} below tolerance")
    ref = triangle_rule(degree) if symmetric else _collapsed_triangle_rule(degree)
    tris = fan_triangles(poly)
    for _ in range(refine):
        tris = [child for tri in tris for child in _subdivide(tri)]
    pts, wts = [], []
    for tri in tris:
        p, w = map_triangle(ref, tri)
        pts.append(p)
        wts.append(w)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), degree)


def split_edge_rule(p0, p1, crossings, degree):
    """Gauss rule on segment p0 -> p1, split at interior crossing points.

    `crossings` may be None, a single point, or a list of points; points that
    do not fall strictly inside the segment are ignored.
    """
    p0 = np.asarray(p0, float)
    p1 = np.asarray(p1, float)
    d = p1 - p0
    length = np.linalg.norm(d)
    if crossings is None:
        crossings = []
    elif isinstance(crossings, np.ndarray) and crossings.ndim == 1:
        crossings = [crossings]
    ts = []
    for x in crossings:
        t = float(np.dot(np.asarray(x, float) - p0, d) / (length * length))
        if 1e-12 < t < 1.0 - 1e-12 and not any(abs(t - s) < 1e-12 for s in ts):
            ts.append(t)
    breaks = np.concatenate([[0.0], np.sort(ts), [1.0]])
    ref = segment_rule(degree)
    pts, wts = [], []
    for a, b in zip(breaks[:-1], breaks[1:]):
        pa = p0 + a * d
        pb = p0 + b * d
        p, w = map_segment(ref, pa, pb)
        pts.append(p)
        wts.append(w)
    return QuadratureRule(np.vstack(pts), np.concatenate(wts), degree)
