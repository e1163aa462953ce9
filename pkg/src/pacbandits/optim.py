"""Optimal sampling-weight solvers and characteristic times.

Non-separator instances admit a one-dimensional characterization of the
optimal arm weights: the scalar root of

    sum_i 1 / (w * gap_i^2 - 1)^2 = 1

on ``[2/gap_min^2, (1 + sqrt(n-1))/gap_min^2]`` (the left-hand side is
strictly decreasing there), after which the unnormalized weights are
``u_best = w`` and ``u_i = w / (w * gap_i^2 - 1)``.

Separator instances require maximizing a concave min of smooth terms over
the convex hull of the context-matrix columns; this is done with
Frank-Wolfe iterations whose linear oracle enumerates the hull vertices
(the columns), using the gradient of the currently minimal ("best
challenger") term and a line search along the chosen direction.

``grid_oracle`` is an independent exhaustive check used by the tests: it
evaluates the exact objective on a full simplex grid and reports the best
node.  It deliberately shares no code with the solvers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None

from .model import NON_SEPARATOR, SEPARATOR, Instance, best_arm, gaps as instance_gaps

ROOT_RESIDUAL_TOL = 1e-12
_TIE_TOL = 1e-12


@dataclass(frozen=True)
class CharacteristicTime:
    """Solved instance complexity: ``t_star = 1 / objective``."""

    kind: str
    t_star: float
    objective: float
    weights: np.ndarray  # arm weights (non-separator) or context distribution (separator)
    mixture: np.ndarray | None = None  # arm mixture certifying the context distribution


@dataclass(frozen=True)
class SepSolution:
    """Frank-Wolfe output for the separator weight problem."""

    wz: np.ndarray
    pi: np.ndarray
    objective: float
    converged: bool
    iterations: int


def d_bernoulli(delta: float) -> float:
    """KL divergence between Bernoulli(delta) and Bernoulli(1 - delta)."""
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta!r}")
    return (1.0 - 2.0 * delta) * math.log((1.0 - delta) / delta)


# ---------------------------------------------------------------------------
# Non-separator weights
# ---------------------------------------------------------------------------

def nonsep_objective(weights, gap_vec) -> float:
    """min over suboptimal arms of (gap_i^2 / 2) * w_best*w_i / (w_best + w_i).

    Zero-weight conventions: a zero weight on the best arm or on any
    suboptimal arm makes the objective 0.
    """
    weights = np.asarray(weights, dtype=float)
    gap_vec = np.asarray(gap_vec, dtype=float)
    best = int(np.argmin(gap_vec))
    wb = weights[best]
    if wb <= 0.0:
        return 0.0
    val = np.inf
    for i in range(len(gap_vec)):
        if i == best:
            continue
        wi = weights[i]
        if wi <= 0.0:
            return 0.0
        val = min(val, 0.5 * gap_vec[i] ** 2 * (wb * wi) / (wb + wi))
    return float(val)


def _check_gaps(gap_vec) -> tuple[np.ndarray, int]:
    gap_vec = np.asarray(gap_vec, dtype=float)
    if gap_vec.ndim != 1 or gap_vec.shape[0] < 2:
        raise ValueError(f"gaps: expected a vector of length >= 2, got shape {gap_vec.shape}")
    best = int(np.argmin(gap_vec))
    if abs(gap_vec[best]) > _TIE_TOL:
        raise ValueError("gaps: the best arm's gap must be 0")
    others = np.delete(gap_vec, best)
    if np.any(others <= _TIE_TOL):
        raise ValueError("gaps: no unique best arm (a second gap is 0 within 1e-12)")
    return gap_vec, best


def nonsep_root_bracket(gap_vec) -> tuple[float, float]:
    """The interval guaranteed to contain the optimality-equation root."""
    gap_vec, best = _check_gaps(gap_vec)
    n = gap_vec.shape[0]
    dmin2 = np.delete(gap_vec, best).min() ** 2
    return 2.0 / dmin2, (1.0 + math.sqrt(n - 1)) / dmin2


def nonsep_root_residual(gap_vec, root: float) -> float:
    """|sum_i 1/(root*gap_i^2 - 1)^2 - 1| over suboptimal arms."""
    gap_vec, best = _check_gaps(gap_vec)
    d2 = np.delete(gap_vec, best) ** 2
    return float(abs(np.sum(1.0 / (root * d2 - 1.0) ** 2) - 1.0))


def solve_nonsep_root(gap_vec) -> float:
    """Root of the scalar optimality equation (Newton with a bisection guard)."""
    gap_vec, best = _check_gaps(gap_vec)
    d2 = np.delete(gap_vec, best) ** 2
    lo, hi = nonsep_root_bracket(gap_vec)
    if gap_vec.shape[0] == 2:
        return lo  # the equation is 1/(w*d2-1)^2 = 1, i.e. w = 2/d2 exactly
    return _newton_root(d2, lo, hi)


def _phi_and_deriv(w, d2):
    x = w * d2 - 1.0
    inv2 = 1.0 / (x * x)
    phi = inv2.sum() - 1.0
    dphi = -2.0 * (d2 * inv2 / x).sum()
    return phi, dphi


def _newton_root(d2: np.ndarray, lo: float, hi: float) -> float:
    # phi is strictly decreasing and convex on [lo, hi] with phi(lo) >= 0 >= phi(hi),
    # so Newton from the left endpoint increases monotonically toward the root.
    w = lo
    for _ in range(200):
        phi, dphi = _phi_and_deriv(w, d2)
        if abs(phi) <= 1e-14:
            return w
        step = w - phi / dphi
        if not (lo <= step <= hi) or dphi >= 0.0:
            # fall back to a bisection step inside the current sign bracket
            if phi > 0.0:
                lo = w
            else:
                hi = w
            step = 0.5 * (lo + hi)
        w_new = min(max(step, lo), hi)
        if w_new == w:
            return w
        w = w_new
    return w


def solve_nonsep_weights(gap_vec) -> np.ndarray:
    """Optimal arm weights for a non-separator gap vector."""
    gap_vec, best = _check_gaps(gap_vec)
    root = solve_nonsep_root(gap_vec)
    u = np.empty_like(gap_vec)
    for i in range(len(gap_vec)):
        if i == best:
            u[i] = root
        else:
            u[i] = root / (root * gap_vec[i] ** 2 - 1.0)
    return u / u.sum()


def _solve_nonsep_batch(gaps_b: np.ndarray, best_b: np.ndarray,
                        warm: np.ndarray | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized weight solve for a batch of gap vectors.

    Args:
        gaps_b: (B, n) gaps, zero at each row's best arm.
        best_b: (B,) best-arm indices.
        warm: optional (B,) previous roots used as Newton starting points.

    Returns:
        (weights (B, n), roots (B,)).
    """
    b, n = gaps_b.shape
    d2 = gaps_b ** 2
    mask = np.ones((b, n), dtype=bool)
    mask[np.arange(b), best_b] = False
    d2c = d2[mask].reshape(b, n - 1)  # challenger squared gaps
    dmin2 = d2c.min(axis=1)
    degenerate = ~(dmin2 > 0)
    if degenerate.any():
        # rows with a tied top (zero challenger gap) have no finite solution;
        # substitute unit gaps so the batch stays finite -- callers are
        # expected to discard these rows
        d2c = np.where(degenerate[:, None], 1.0, d2c)
        dmin2 = np.where(degenerate, 1.0, dmin2)
    lo = 2.0 / dmin2
    hi = (1.0 + math.sqrt(n - 1)) / dmin2
    if n == 2:
        roots = lo.copy()
    else:
        w = lo.copy()
        if warm is not None:
            w = np.where(np.isfinite(warm), np.clip(warm, lo, hi), lo)
        lo_b, hi_b = lo.copy(), hi.copy()
        for _ in range(80):
            x = w[:, None] * d2c - 1.0
            inv2 = 1.0 / (x * x)
            phi = inv2.sum(axis=1) - 1.0
            if np.all(np.abs(phi) <= 1e-14):
                break
            dphi = -2.0 * (d2c * inv2 / x).sum(axis=1)
            pos = phi > 0.0
            lo_b = np.where(pos, np.maximum(lo_b, w), lo_b)
            hi_b = np.where(~pos, np.minimum(hi_b, w), hi_b)
            step = w - phi / dphi
            bad = ~((step >= lo_b) & (step <= hi_b))
            step = np.where(bad, 0.5 * (lo_b + hi_b), step)
            w = step
        roots = w
    u = np.empty((b, n))
    u[mask] = (roots[:, None] / (roots[:, None] * d2c - 1.0)).ravel()
    u[np.arange(b), best_b] = roots
    return u / u.sum(axis=1, keepdims=True), roots


# ---------------------------------------------------------------------------
# Separator weights
# ---------------------------------------------------------------------------

def _sep_terms(inst: Instance):
    """(challenger squared gaps, squared column differences, best arm)."""
    if inst.kind != SEPARATOR:
        raise ValueError(f"separator objective needs a separator instance, got {inst.kind}")
    best = best_arm(inst)
    g = instance_gaps(inst)
    diffs = inst.a[:, [best]] - inst.a  # (k, n)
    csq = (diffs ** 2).T  # (n, k); row `best` is all zeros
    return g ** 2, csq, best


def sep_objective(wz, inst: Instance) -> float:
    """min over challengers of gap_i^2 / (2 * sum_j (A[j,best]-A[j,i])^2 / wz_j).

    Coordinates of ``wz`` are clamped below at 1e-12; a zero weight on a
    context that some challenger needs therefore sends that term (and the
    objective) to ~0, matching the limit convention.
    """
    wz = np.asarray(wz, dtype=float)
    d2, csq, best = _sep_terms(inst)
    wsafe = np.maximum(wz, 1e-12)
    denom = csq @ (1.0 / wsafe)  # (n,)
    val = np.inf
    for i in range(inst.n):
        if i == best:
            continue
        if denom[i] <= 0.0:
            continue  # identical columns cannot occur with a unique best arm
        val = min(val, d2[i] / (2.0 * denom[i]))
    return float(val)


def _sep_objective_batch(winv, d2c, csqc):
    """Batched piece values: (B,) objective, (B,) argmin piece.

    winv: (B, k) elementwise 1/w; d2c: (B, m) challenger squared gaps;
    csqc: (B, m, k) challenger squared column differences.
    """
    denom = np.einsum("bmk,bk->bm", csqc, winv)
    vals = d2c / (2.0 * denom)
    piece = np.argmin(vals, axis=1)
    return np.take_along_axis(vals, piece[:, None], axis=1)[:, 0], piece


_GAMMA_GRID = np.geomspace(1.0, 1e-7, 24)


def solve_sep_weights(inst: Instance, tol: float = 1e-9,
                      max_iters: int = 50_000,
                      init_pi: np.ndarray | None = None) -> SepSolution:
    """Frank-Wolfe solve of the separator weight problem over the hull.

    Maintains the iterate as an arm mixture ``pi`` (so the returned context
    distribution always carries an exact membership certificate).  Each
    iteration takes the gradient of the minimal challenger term, picks the
    best hull vertex, and line-searches the true min-objective along the
    segment.  When the best-challenger direction stalls at a kink between
    two active terms, gradients of the two leading terms are blended and
    the line search retried.

    Returns the best iterate found; ``converged`` is False only if the
    Frank-Wolfe gap never fell below ``tol * max(1, |f|)`` within
    ``max_iters`` iterations and progress stalled.
    """
    d2, csq, best = _sep_terms(inst)
    a = inst.a
    k, n = a.shape
    challengers = [i for i in range(n) if i != best]
    d2c = d2[challengers]
    csqc = csq[challengers]  # (m, k)
    if np.any(csqc.sum(axis=1) <= 0.0):
        raise ValueError("an arm shares its context column with the best arm")

    pi = np.full(n, 1.0 / n) if init_pi is None else np.asarray(init_pi, dtype=float).copy()
    w = a @ pi

    def piece_vals(wvec):
        return d2c / (2.0 * (csqc @ (1.0 / wvec)))

    def objective(wvec):
        return float(piece_vals(wvec).min())

    def piece_grad(wvec, c):
        denom = csqc[c] @ (1.0 / wvec)
        return (d2c[c] / (2.0 * denom ** 2)) * csqc[c] / (wvec * wvec)

    f = objective(w)
    best_f, best_pi, best_w = f, pi.copy(), w.copy()
    converged = False
    no_improve = 0
    it = 0
    for it in range(1, max_iters + 1):
        vals = piece_vals(w)
        c = int(np.argmin(vals))
        grad = piece_grad(w, c)
        scores = grad @ a
        v = int(np.argmax(scores))
        fw_gap = float(scores[v] - grad @ w)
        scale = max(1.0, abs(f))
        if fw_gap <= tol * scale:
            converged = True
            break
        dw = a[:, v] - w
        cand_w = w[None, :] + _GAMMA_GRID[:, None] * dw[None, :]
        cand_f = (d2c[None, :] / (2.0 * (1.0 / cand_w) @ csqc.T)).min(axis=1)
        gi = int(np.argmax(cand_f))
        gamma = _GAMMA_GRID[gi]
        if cand_f[gi] <= f + 1e-15 * scale:
            # Stalled at a kink between the two leading pieces: blend their
            # gradients.  Every blend is a supergradient, so the smallest
            # blended Frank-Wolfe gap still upper-bounds the suboptimality.
            c2 = int(np.argsort(vals)[1]) if len(vals) > 1 else c
            grad2 = piece_grad(w, c2)
            gamma, v, cert = _blended_step(a, w, grad, grad2, objective, f)
            if gamma == 0.0:
                converged = cert <= max(10.0 * tol * scale, 1e-10)
                break
            dw = a[:, v] - w
        pi *= 1.0 - gamma
        pi[v] += gamma
        w = a @ pi
        f_new = objective(w)
        no_improve = no_improve + 1 if f_new <= best_f + 1e-14 * scale else 0
        f = f_new
        if f > best_f:
            best_f, best_pi, best_w = f, pi.copy(), w.copy()
        if no_improve > 500:
            break
    return SepSolution(wz=best_w, pi=best_pi, objective=best_f,
                       converged=converged, iterations=it)


def _blended_step(a, w, grad1, grad2, objective, f):
    """Line searches over blends of two active gradients.

    Returns (gamma, vertex, certificate): the best improving step found and
    the smallest Frank-Wolfe gap over the blend grid (an upper bound on the
    remaining suboptimality when no step improves).
    """
    best_gamma, best_v, best_val = 0.0, 0, f
    cert = np.inf
    for theta in np.linspace(0.0, 1.0, 21):
        g = theta * grad1 + (1.0 - theta) * grad2
        scores = g @ a
        v = int(np.argmax(scores))
        cert = min(cert, float(scores[v] - g @ w))
        dw = a[:, v] - w
        cand_w = w[None, :] + _GAMMA_GRID[:, None] * dw[None, :]
        if np.any(cand_w <= 0.0):
            continue
        vals = np.array([objective(cw) for cw in cand_w])
        gi = int(np.argmax(vals))
        if vals[gi] > best_val + 1e-15 * max(1.0, abs(f)):
            best_gamma, best_v, best_val = _GAMMA_GRID[gi], v, vals[gi]
    return best_gamma, best_v, cert


def characteristic_time(inst: Instance, tol: float | None = None) -> CharacteristicTime:
    """Instance complexity and the weights attaining it.

    ``tol`` tightens or loosens the separator solver's convergence target
    and is ignored for non-separator instances, whose solve is exact.
    """
    if inst.kind == NON_SEPARATOR:
        g = instance_gaps(inst)
        weights = solve_nonsep_weights(g)
        obj = nonsep_objective(weights, g)
        return CharacteristicTime(kind=inst.kind, t_star=1.0 / obj, objective=obj,
                                  weights=weights)
    sol = solve_sep_weights(inst) if tol is None else solve_sep_weights(inst, tol=tol)
    return CharacteristicTime(kind=inst.kind, t_star=1.0 / sol.objective,
                              objective=sol.objective, weights=sol.wz, mixture=sol.pi)


# ---------------------------------------------------------------------------
# Exhaustive grid oracle (independent check; no code shared with solvers)
# ---------------------------------------------------------------------------

if numba is not None:
    @numba.njit(cache=True)
    def _grid_nonsep_kernel(d2, res):  # pragma: no cover - exercised via wrapper
        # d2: squared gaps of the challengers (the best arm removed).
        m = d2.shape[0]
        best_val = 0.0
        b0 = 0
        barg = np.zeros(m, np.int64)
        if m == 1:
            for c0 in range(1, res):
                w0 = c0 / res
                w1 = (res - c0) / res
                v = 0.5 * d2[0] * w0 * w1 / (w0 + w1)
                if v > best_val:
                    best_val = v
                    b0 = c0
                    barg[0] = res - c0
        elif m == 2:
            for c0 in range(1, res - 1):
                w0 = c0 / res
                for c1 in range(1, res - c0):
                    c2 = res - c0 - c1
                    w1 = c1 / res
                    w2 = c2 / res
                    v1 = d2[0] * w0 * w1 / (w0 + w1)
                    v2 = d2[1] * w0 * w2 / (w0 + w2)
                    v = 0.5 * min(v1, v2)
                    if v > best_val:
                        best_val = v
                        b0 = c0
                        barg[0] = c1
                        barg[1] = c2
        else:
            for c0 in range(1, res - 2):
                w0 = c0 / res
                for c1 in range(1, res - c0 - 1):
                    w1 = c1 / res
                    v1 = d2[0] * w0 * w1 / (w0 + w1)
                    for c2 in range(1, res - c0 - c1):
                        c3 = res - c0 - c1 - c2
                        w2 = c2 / res
                        w3 = c3 / res
                        v2 = d2[1] * w0 * w2 / (w0 + w2)
                        v3 = d2[2] * w0 * w3 / (w0 + w3)
                        v = 0.5 * min(v1, min(v2, v3))
                        if v > best_val:
                            best_val = v
                            b0 = c0
                            barg[0] = c1
                            barg[1] = c2
                            barg[2] = c3
        return best_val, b0, barg
else:  # pragma: no cover
    _grid_nonsep_kernel = None


def _grid_nonsep_numpy(d2: np.ndarray, res: int):
    """Pure-numpy fallback for the exhaustive non-separator grid."""
    m = d2.shape[0]
    best_val, best_node = 0.0, None
    for c0 in range(1, res):
        w0 = c0 / res
        rem = res - c0
        if m == 1:
            nodes = np.array([[rem]])
        elif m == 2:
            c1 = np.arange(1, rem)
            nodes = np.stack([c1, rem - c1], axis=1)
        else:
            c1 = np.arange(1, rem - 1)
            rows = []
            for c1v in c1:
                c2 = np.arange(1, rem - c1v)
                rows.append(np.stack([np.full_like(c2, c1v), c2, rem - c1v - c2], axis=1))
            if not rows:
                continue
            nodes = np.concatenate(rows, axis=0)
        if nodes.size == 0 or np.any(nodes <= 0, axis=1).all():
            continue
        valid = (nodes > 0).all(axis=1)
        nodes = nodes[valid]
        w = nodes / res
        vals = 0.5 * d2 * w0 * w / (w0 + w)
        v = vals.min(axis=1)
        i = int(np.argmax(v))
        if v[i] > best_val:
            best_val = float(v[i])
            best_node = np.concatenate([[c0], nodes[i]])
    return best_val, best_node


def _simplex_grid_nodes(n: int, res: int):
    """Yield integer composition blocks of `res` into `n` parts (numpy arrays)."""
    if n == 2:
        c0 = np.arange(res + 1)
        yield np.stack([c0, res - c0], axis=1)
        return
    if n == 3:
        for c0 in range(res + 1):
            c1 = np.arange(res - c0 + 1)
            yield np.stack([np.full_like(c1, c0), c1, res - c0 - c1], axis=1)
        return
    if n == 4:
        for c0 in range(res + 1):
            for c1 in range(res - c0 + 1):
                c2 = np.arange(res - c0 - c1 + 1)
                yield np.stack([np.full_like(c2, c0), np.full_like(c2, c1),
                                c2, res - c0 - c1 - c2], axis=1)
        return
    raise ValueError(f"grid oracle supports n <= 4, got n={n}")


def grid_oracle(inst: Instance, resolution: float) -> CharacteristicTime:
    """Exhaustive simplex-grid maximization of the exact objective.

    ``resolution`` is the grid step (e.g. 1/400 places nodes at multiples
    of 1/400).  Non-separator: grid over arm weights.  Separator: grid over
    arm-mixture coefficients (so every node is certifiably in the hull).
    Intended for small problems (n <= 4, k <= 4) as an independent
    reference.
    """
    if inst.n > 4 or inst.k > 4:
        raise ValueError(f"grid oracle supports n, k <= 4, got n={inst.n}, k={inst.k}")
    if not 0.0 < resolution <= 0.5:
        raise ValueError(f"resolution must be a grid step in (0, 0.5], got {resolution!r}")
    res = int(round(1.0 / resolution))
    if inst.kind == NON_SEPARATOR:
        g = instance_gaps(inst)
        best = int(np.argmin(g))
        d2 = np.delete(g, best) ** 2
        if _grid_nonsep_kernel is not None:
            val, b0, rest = _grid_nonsep_kernel(d2, res)
            node = np.concatenate([[b0], np.asarray(rest)])
        else:
            val, node = _grid_nonsep_numpy(d2, res)
        weights = np.empty(inst.n)
        weights[best] = node[0] / res
        weights[[i for i in range(inst.n) if i != best]] = node[1:] / res
        return CharacteristicTime(kind=inst.kind, t_star=1.0 / val, objective=val,
                                  weights=weights)
    d2, csq, best = _sep_terms(inst)
    challengers = [i for i in range(inst.n) if i != best]
    d2c = d2[challengers]
    csqc = csq[challengers]
    best_val, best_pi = 0.0, None
    for block in _simplex_grid_nodes(inst.n, res):
        pi = block / res
        w = pi @ inst.a.T  # (m, k)
        denom = (1.0 / w) @ csqc.T  # (m, #challengers)
        vals = (d2c / (2.0 * denom)).min(axis=1)
        i = int(np.argmax(vals))
        if vals[i] > best_val:
            best_val = float(vals[i])
            best_pi = pi[i].copy()
    wz = inst.a @ best_pi
    return CharacteristicTime(kind=inst.kind, t_star=1.0 / best_val, objective=best_val,
                              weights=wz, mixture=best_pi)
