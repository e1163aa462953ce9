"""Convex-hull geometry over context distributions.

The reachable context distributions form the convex hull of the columns of
``A``.  Sampling-rule tracking needs two primitives on that hull:

* membership with a certifying arm mixture, and
* the maximal extension of a ray ``origin + s * (through - origin)``,
  ``s >= 1``, that stays inside the hull ("ray exit").

Both are small linear programs; they are solved with a dense two-phase
simplex method with Bland's rule (problems here are at most
``(k+1) x (n+2)``, so exactness and determinism matter more than speed).
``FacetOracle`` precomputes the facet structure of the hull
once per matrix so run loops can take ray exits in closed form.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEMBERSHIP_TOL = 1e-8
DEGENERATE_RAY_TOL = 1e-12
_PIVOT_TOL = 1e-11


class GeometryError(RuntimeError):
    """Raised when an LP is malformed or numerically unsolvable."""


class DegenerateRayError(ValueError):
    """Raised when origin and through coincide within 1e-12 (no ray)."""


@dataclass(frozen=True)
class ArmMixture:
    """A mixture over arms certifying a target context distribution."""

    pi: np.ndarray
    target: np.ndarray

    def residual(self, a: np.ndarray) -> float:
        return float(np.max(np.abs(a @ self.pi - self.target)))


@dataclass(frozen=True)
class RayExit:
    """The farthest in-hull point on a ray and its certifying mixture."""

    scale: float
    exit_point: np.ndarray
    mixture: ArmMixture


def _pivot(tab: np.ndarray, basis: np.ndarray, row: int, col: int) -> None:
    tab[row] /= tab[row, col]
    for r in range(tab.shape[0]):
        if r != row and tab[r, col] != 0.0:
            tab[r] -= tab[r, col] * tab[row]
    basis[row] = col


def _simplex_iterate(tab: np.ndarray, basis: np.ndarray, ncols: int,
                     max_pivots: int = 20_000) -> str:
    """Run tableau pivots until optimal/unbounded.

    The last row holds reduced costs ``z_j - c_j`` (optimal when all are
    >= -tol for a maximization); the last column is the RHS.  Bland's rule
    (lowest eligible index) is used for both entering and leaving choices,
    which prevents cycling and makes the solve deterministic.
    """
    m = tab.shape[0] - 1
    for _ in range(max_pivots):
        col = -1
        for j in range(ncols):
            if tab[m, j] < -_PIVOT_TOL:
                col = j
                break
        if col < 0:
            return "optimal"
        row, best_ratio, best_var = -1, np.inf, np.inf
        for r in range(m):
            if tab[r, col] > _PIVOT_TOL:
                ratio = tab[r, -1] / tab[r, col]
                if ratio < best_ratio - 1e-12 or (
                    abs(ratio - best_ratio) <= 1e-12 and basis[r] < best_var
                ):
                    row, best_ratio, best_var = r, ratio, basis[r]
        if row < 0:
            return "unbounded"
        _pivot(tab, basis, row, col)
    raise GeometryError("simplex method exceeded the pivot budget")


def simplex_solve_eq(e: np.ndarray, h: np.ndarray, c: np.ndarray,
                     feas_tol: float = 1e-9):
    """Maximize ``c @ x`` subject to ``e @ x == h`` and ``x >= 0``.

    Returns:
        (x, value, status) with status "optimal", "infeasible" or
        "unbounded"; x is None unless status is "optimal".
    """
    e = np.asarray(e, dtype=float)
    h = np.asarray(h, dtype=float).copy()
    c = np.asarray(c, dtype=float)
    m, nv = e.shape
    e = e.copy()
    flip = h < 0
    e[flip] *= -1.0
    h[flip] *= -1.0

    # Phase I: artificial identity basis, maximize -(sum of artificials).
    tab = np.zeros((m + 1, nv + m + 1))
    tab[:m, :nv] = e
    tab[:m, nv:nv + m] = np.eye(m)
    tab[:m, -1] = h
    basis = np.arange(nv, nv + m)
    tab[m, :nv] = -e.sum(axis=0)
    tab[m, -1] = -h.sum()
    status = _simplex_iterate(tab, basis, nv + m)
    if status != "optimal":
        raise GeometryError("phase I of the simplex method did not terminate cleanly")
    if tab[m, -1] < -feas_tol:
        return None, None, "infeasible"

    # Drive remaining artificials out of the basis; drop redundant rows.
    keep = []
    for r in range(m):
        if basis[r] >= nv:
            piv = -1
            for j in range(nv):
                if abs(tab[r, j]) > _PIVOT_TOL:
                    piv = j
                    break
            if piv >= 0:
                _pivot(tab, basis, r, piv)
                keep.append(r)
            # else: the row is redundant; leave the zero artificial basic
            # and carry the row along (it never pivots again).
        else:
            keep.append(r)

    # Phase II: swap in the real objective.
    tab2 = np.zeros((m + 1, nv + 1))
    tab2[:m, :nv] = tab[:m, :nv]
    tab2[:m, -1] = tab[:m, -1]
    cb = np.array([c[b] if b < nv else 0.0 for b in basis])
    tab2[m, :nv] = cb @ tab2[:m, :nv] - c
    tab2[m, -1] = cb @ tab2[:m, -1]
    # Freeze redundant rows by forbidding their artificial basics to leave:
    # rows whose basis is still artificial have all-zero real columns, so
    # they can never be selected by the ratio test; nothing to do.
    status = _simplex_iterate(tab2, basis, nv)
    if status == "unbounded":
        return None, None, "unbounded"
    x = np.zeros(nv)
    for r in range(m):
        if basis[r] < nv:
            x[basis[r]] = tab2[r, -1]
    return x, float(tab2[m, -1]), "optimal"


def hull_membership(point: np.ndarray, a: np.ndarray,
                    tol: float = MEMBERSHIP_TOL) -> ArmMixture | None:
    """Certify ``point`` as a mixture of the columns of ``a``, or return None.

    The certificate satisfies ``||a @ pi - point||_inf <= tol``.
    """
    a = np.asarray(a, dtype=float)
    point = np.asarray(point, dtype=float)
    k, n = a.shape
    if point.shape != (k,):
        raise ValueError(f"point: expected shape ({k},), got {point.shape}")
    e = np.vstack([a, np.ones((1, n))])
    h = np.concatenate([point, [1.0]])
    # Feasibility via phase I alone: maximize 0 subject to the equalities.
    x, _, status = simplex_solve_eq(e, h, np.zeros(n), feas_tol=tol)
    if status != "optimal":
        return None
    pi = _clean_simplex(x[:n])
    mix = ArmMixture(pi=pi, target=point)
    if mix.residual(a) > tol:
        return None
    return mix


def _clean_simplex(pi: np.ndarray) -> np.ndarray:
    pi = np.where(pi < 0.0, 0.0, pi)
    s = pi.sum()
    if s <= 0.0:
        raise GeometryError("mixture collapsed to zero while cleaning")
    return pi / s


def solve_scale_lp(origin: np.ndarray, direction: np.ndarray, a: np.ndarray):
    """Maximize ``s >= 1`` with ``origin + s*direction`` in the hull of ``a``'s columns.

    Returns:
        (s, pi): the optimal scale and a mixture hitting the scaled point.

    Raises:
        GeometryError: if ``origin + direction`` is not in the hull (the
            caller promised it is) or the LP misbehaves.
    """
    a = np.asarray(a, dtype=float)
    origin = np.asarray(origin, dtype=float)
    direction = np.asarray(direction, dtype=float)
    k, n = a.shape
    through = origin + direction
    # Variables (pi, sigma) with s = 1 + sigma:  A pi - sigma*d = through.
    e = np.zeros((k + 1, n + 1))
    e[:k, :n] = a
    e[:k, n] = -direction
    e[k, :n] = 1.0
    h = np.concatenate([through, [1.0]])
    c = np.zeros(n + 1)
    c[n] = 1.0
    x, val, status = simplex_solve_eq(e, h, c)
    if status == "infeasible":
        raise GeometryError("ray target is not inside the hull")
    if status == "unbounded":
        raise GeometryError("scale LP unbounded; direction degenerate?")
    s = 1.0 + max(val, 0.0)
    pi = _clean_simplex(x[:n])
    return s, pi


def ray_exit(origin: np.ndarray, through: np.ndarray, a: np.ndarray) -> RayExit:
    """Extend the ray from ``origin`` through ``through`` to the hull boundary.

    Raises:
        DegenerateRayError: if origin == through within 1e-12; the caller
            should substitute the through-point (with its own mixture).
    """
    origin = np.asarray(origin, dtype=float)
    through = np.asarray(through, dtype=float)
    direction = through - origin
    if np.max(np.abs(direction)) <= DEGENERATE_RAY_TOL:
        raise DegenerateRayError("origin and through coincide; no ray to extend")
    s, pi = solve_scale_lp(origin, direction, a)
    point = origin + s * direction
    mix = ArmMixture(pi=pi, target=point)
    if mix.residual(a) > MEMBERSHIP_TOL:
        raise GeometryError(
            f"ray-exit certificate residual {mix.residual(a):.3g} exceeds 1e-8"
        )
    return RayExit(scale=s, exit_point=point, mixture=mix)


class FacetOracle:
    """Closed-form ray exits from a precomputed facet description of the hull.

    Built once per context matrix; ``exit_batch`` then answers many ray
    queries with a handful of vectorized operations.  Falls back to
    ``available = False`` when the hull is not full-dimensional in its
    ambient simplex slice (callers should then use :func:`ray_exit`).
    """

    def __init__(self, a: np.ndarray):
        a = np.asarray(a, dtype=float)
        self.a = a
        k, n = a.shape
        self.k, self.n = k, n
        self.available = False
        if k == 1:
            return
        pts = a[:-1, :].T  # drop the redundant last coordinate
        if k == 2:
            lo_arm = int(np.argmin(pts[:, 0]))
            hi_arm = int(np.argmax(pts[:, 0]))
            if pts[hi_arm, 0] - pts[lo_arm, 0] <= 1e-12:
                return
            # Facets of an interval: x <= hi and -x <= -lo.
            self.normals = np.array([[1.0], [-1.0]])
            self.offsets = np.array([-pts[hi_arm, 0], pts[lo_arm, 0]])
            self.facet_arms = np.array([[hi_arm], [lo_arm]])
            self.bary_pinv = np.ones((2, 1, 2)) * np.array([0.0, 1.0])
            self.available = True
            return
        try:
            from scipy.spatial import ConvexHull, QhullError
        except ImportError:  # pragma: no cover
            return
        try:
            hull = ConvexHull(pts, qhull_options="Qt")
        except QhullError:
            return
        eqs = hull.equations  # rows [normal | offset], normal@x + offset <= 0 inside
        self.normals = eqs[:, :-1]
        self.offsets = eqs[:, -1]
        self.facet_arms = hull.simplices  # (F, k-1) arm indices per facet
        f = self.facet_arms.shape[0]
        d = k - 1
        pinvs = np.empty((f, d, d + 1))
        for fi in range(f):
            verts = pts[self.facet_arms[fi]]  # (d, d)
            m = np.vstack([verts.T, np.ones((1, d))])  # (d+1, d)
            pinvs[fi] = np.linalg.pinv(m)
        self.bary_pinv = pinvs
        self.available = True

    def exit_batch(self, origins: np.ndarray, throughs: np.ndarray):
        """Vectorized ray exits.

        Args:
            origins: (B, k) ray origins (need not lie in the hull).
            throughs: (B, k) in-hull points defining the directions.

        Returns:
            (scales, points, mixtures): shapes (B,), (B, k), (B, n).
            Degenerate rays (origin == through) get scale 1 and a
            NaN mixture row; callers substitute their own certificate.
        """
        if not self.available:
            raise GeometryError("facet oracle unavailable for this matrix")
        b = origins.shape[0]
        o = origins[:, :-1]
        d = throughs[:, :-1] - o
        degenerate = np.max(np.abs(throughs - origins), axis=1) <= DEGENERATE_RAY_TOL
        num = -(o @ self.normals.T + self.offsets)  # (B, F), >= 0 at in-hull origins
        den = d @ self.normals.T  # (B, F)
        with np.errstate(divide="ignore", invalid="ignore"):
            cand = np.where(den > 1e-14, num / den, np.inf)
        fstar = np.argmin(cand, axis=1)
        scales = cand[np.arange(b), fstar]
        scales = np.where(np.isfinite(scales), np.maximum(scales, 1.0), 1.0)
        scales = np.where(degenerate, 1.0, scales)
        points = origins + scales[:, None] * (throughs - origins)
        exit_proj = points[:, :-1]
        pinv = self.bary_pinv[fstar]  # (B, d, d+1)
        rhs = np.concatenate([exit_proj, np.ones((b, 1))], axis=1)  # (B, d+1)
        alpha = np.einsum("bij,bj->bi", pinv, rhs)  # (B, d)
        alpha = np.maximum(alpha, 0.0)
        alpha /= alpha.sum(axis=1, keepdims=True)
        mixtures = np.zeros((b, self.n))
        np.put_along_axis(mixtures, self.facet_arms[fstar], alpha, axis=1)
        mixtures[degenerate] = np.nan
        return scales, points, mixtures
