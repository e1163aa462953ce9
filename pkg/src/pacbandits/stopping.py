"""Sequential testing: GLR statistics and anytime-valid thresholds.

The stopping rule compares a generalized-likelihood-ratio statistic against
a time-dependent threshold built from the function

    C^g(x) = min_{1/2 < lam < 1} (g(lam) + x) / lam,
    g(lam) = 2*lam - 2*lam*ln(4*lam) + ln(zeta(2*lam)) - ln(1 - lam)/2,

which calibrates a mixture-of-e-values bound.  Thresholds:

* non-separator (cell means, rank 2k):
    4k * ln(4 + ln(t / 2k)) + 2k * C^g(ln((n-1)/delta) / 2k)
* separator (context means, per-context counts):
    2 * sum_j ln(4 + ln(Nz_j)) + k * C^g(ln(1/delta) / k)
* context-blind baseline (arm means, rank 2, variance-inflated):
    4 * ln(4 + ln(t / 2)) + 2 * C^g(ln((n-1)/delta) / 2)

GLR statistics are the closed-form minimizations of the weighted squared
distance from the empirical means to the nearest parameter where some
other arm is best; ``glr_brute_oracle`` re-derives them numerically by
projected gradient descent for cross-checking.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .model import (
    NON_SEPARATOR,
    SEPARATOR,
    EmpiricalState,
    NotInitializedError,
    unique_argmax,
)

_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0
_LAM_LO = 0.5 + 1e-6
_LAM_HI = 1.0 - 1e-9


@dataclass(frozen=True)
class GlrReport:
    """GLR stopping statistic and the arms that produced it.

    ``challenger`` and ``empirical_best`` are None when the empirical best
    arm is not unique (the statistic is then 0 by convention).
    """

    statistic: float
    challenger: int | None
    empirical_best: int | None


def riemann_zeta(s: float) -> float:
    """zeta(s) for 1 < s <= 2, absolute error well below 1e-12.

    Direct summation of the leading terms plus an Euler-Maclaurin tail
    (integral, half-term, and two Bernoulli corrections).
    """
    if not 1.0 < s <= 2.0:
        raise ValueError(f"riemann_zeta requires 1 < s <= 2, got {s!r}")
    n = 1000
    m = np.arange(1, n, dtype=float)
    head = float(np.sum(m ** (-s)))
    tail = (
        n ** (1.0 - s) / (s - 1.0)
        + 0.5 * n ** (-s)
        + s * n ** (-s - 1.0) / 12.0
        - s * (s + 1.0) * (s + 2.0) * n ** (-s - 3.0) / 720.0
    )
    return head + tail


def g_fn(lam: float) -> float:
    """The exponent function g; diverges at both ends of (1/2, 1)."""
    if not 0.5 < lam < 1.0:
        raise ValueError(f"g_fn requires 1/2 < lam < 1, got {lam!r}")
    return (
        2.0 * lam
        - 2.0 * lam * math.log(4.0 * lam)
        + math.log(riemann_zeta(2.0 * lam))
        - 0.5 * math.log(1.0 - lam)
    )


@lru_cache(maxsize=4096)
def c_g(x: float) -> float:
    """min over lam in (1/2, 1) of (g(lam) + x) / lam.

    A 256-point scan seeds a golden-section refinement (lam tolerance
    1e-10).  Results are memoized; thresholds call this with one fixed x
    per configuration.
    """
    if not math.isfinite(x):
        raise ValueError(f"c_g requires finite x, got {x!r}")
    grid = np.linspace(_LAM_LO, _LAM_HI, 256)
    vals = [(g_fn(l) + x) / l for l in grid]
    i = int(np.argmin(vals))
    lo = grid[max(i - 1, 0)]
    hi = grid[min(i + 1, len(grid) - 1)]
    c = hi - _GOLDEN * (hi - lo)
    d = lo + _GOLDEN * (hi - lo)
    fc = (g_fn(c) + x) / c
    fd = (g_fn(d) + x) / d
    while hi - lo > 1e-10:
        if fc < fd:
            hi, d, fd = d, c, fc
            c = hi - _GOLDEN * (hi - lo)
            fc = (g_fn(c) + x) / c
        else:
            lo, c, fc = c, d, fd
            d = lo + _GOLDEN * (hi - lo)
            fd = (g_fn(d) + x) / d
    lam = 0.5 * (lo + hi)
    return (g_fn(lam) + x) / lam


def _log_log_term(arg: float) -> float:
    """ln(4 + ln(arg)) with the inner expression clamped below at e."""
    inner = 4.0 + math.log(arg)
    return math.log(max(inner, math.e))


def threshold_nonsep(t: int, delta: float, n: int, k: int) -> float:
    """Stopping threshold for the cell-mean (non-separator) GLR at round t."""
    _check_threshold_args(t, delta, n)
    return (4.0 * k * _log_log_term(t / (2.0 * k))
            + 2.0 * k * c_g(math.log((n - 1) / delta) / (2.0 * k)))


def threshold_sep(state, delta: float, k: int | None = None) -> float:
    """Stopping threshold for the context-mean (separator) GLR.

    Depends on the per-context observation counts rather than on t alone;
    ``state`` may be an EmpiricalState or a raw count vector.
    """
    nz = np.asarray(getattr(state, "n_z", state), dtype=float)
    _check_threshold_args(1, delta, 2)
    if np.any(nz < 1):
        j = int(np.argmin(nz))
        raise NotInitializedError(
            f"context {j + 1} has no observations yet; finish initialization first")
    if k is None:
        k = nz.shape[0]
    elif k != nz.shape[0]:
        raise ValueError(f"k={k} does not match {nz.shape[0]} context counts")
    inner = np.maximum(4.0 + np.log(nz), math.e)
    return float(2.0 * np.sum(np.log(inner)) + k * c_g(math.log(1.0 / delta) / k))


def threshold_classic(t: int, delta: float, n: int) -> float:
    """Stopping threshold for the context-blind arm-mean GLR at round t."""
    _check_threshold_args(t, delta, n)
    return 4.0 * _log_log_term(t / 2.0) + 2.0 * c_g(math.log((n - 1) / delta) / 2.0)


def _check_threshold_args(t, delta, n):
    if t < 1:
        raise ValueError(f"round index must be >= 1, got {t}")
    if not 0.0 < delta < 1.0:
        raise ValueError(f"delta must be in (0, 1), got {delta!r}")
    if n < 2:
        raise ValueError(f"need at least 2 arms, got n={n}")


# ---------------------------------------------------------------------------
# GLR statistics (closed forms)
# ---------------------------------------------------------------------------

def glr_nonsep(state: EmpiricalState, a: np.ndarray) -> GlrReport:
    """Cell-mean GLR: min over challengers s of

        (r_hat[best] - r_hat[s])^2
        / (2 * sum_j (a[j,best]^2/N[j,best] + a[j,s]^2/N[j,s]))
    """
    if state.kind != NON_SEPARATOR:
        raise ValueError("glr_nonsep needs a non-separator state")
    mu_hat = state.empirical_means()
    r = np.einsum("ji,ji->i", a, mu_hat)
    best = unique_argmax(r)
    if best is None:
        return GlrReport(statistic=0.0, challenger=None, empirical_best=None)
    s_arr = np.einsum("ji,ji->i", a * a, 1.0 / state.n_joint)
    lam, challenger = _glr_from_terms(r, s_arr, best)
    return GlrReport(statistic=lam, challenger=challenger, empirical_best=best)


def glr_sep(state: EmpiricalState, a: np.ndarray) -> GlrReport:
    """Context-mean GLR: min over challengers s of

        (r_hat[best] - r_hat[s])^2
        / (2 * sum_j (a[j,best] - a[j,s])^2 / Nz[j])
    """
    if state.kind != SEPARATOR:
        raise ValueError("glr_sep needs a separator state")
    mu_hat = state.empirical_means()
    r = mu_hat @ a
    best = unique_argmax(r)
    if best is None:
        return GlrReport(statistic=0.0, challenger=None, empirical_best=None)
    diffs = a[:, [best]] - a  # (k, n)
    denom = np.einsum("ji,j->i", diffs * diffs, 1.0 / state.n_z)
    lam = np.inf
    challenger = -1
    for i in range(a.shape[1]):
        if i == best or denom[i] <= 0.0:
            continue
        v = (r[best] - r[i]) ** 2 / (2.0 * denom[i])
        if v < lam:
            lam, challenger = v, i
    return GlrReport(statistic=float(lam), challenger=challenger, empirical_best=best)


def glr_classic(arm_counts, arm_means, sigma2: float) -> GlrReport:
    """Context-blind GLR on per-arm means with sub-Gaussian variance sigma2."""
    counts = np.asarray(arm_counts, dtype=float)
    means = np.asarray(arm_means, dtype=float)
    if np.any(counts < 1):
        i = int(np.argmin(counts))
        raise NotInitializedError(
            f"arm {i + 1} has no pulls yet; finish initialization first")
    best = unique_argmax(means)
    if best is None:
        return GlrReport(statistic=0.0, challenger=None, empirical_best=None)
    inv = 1.0 / counts
    lam = np.inf
    challenger = -1
    for i in range(means.shape[0]):
        if i == best:
            continue
        v = (means[best] - means[i]) ** 2 / (2.0 * sigma2 * (inv[best] + inv[i]))
        if v < lam:
            lam, challenger = v, i
    return GlrReport(statistic=float(lam), challenger=challenger, empirical_best=best)


def _glr_from_terms(r: np.ndarray, s_arr: np.ndarray, best: int):
    lam = np.inf
    challenger = -1
    for i in range(r.shape[0]):
        if i == best:
            continue
        v = (r[best] - r[i]) ** 2 / (2.0 * (s_arr[best] + s_arr[i]))
        if v < lam:
            lam, challenger = v, i
    return float(lam), challenger


# Batched variants used by the run engine (same math, one row per run). ----

def glr_nonsep_batch(r, s_arr, best):
    """(B,) statistics from per-run rewards r, variance terms s_arr, best arms."""
    b, n = r.shape
    rb = np.take_along_axis(r, best[:, None], axis=1)
    sb = np.take_along_axis(s_arr, best[:, None], axis=1)
    vals = (rb - r) ** 2 / (2.0 * (sb + s_arr))
    vals[np.arange(b), best] = np.inf
    return vals.min(axis=1)


def glr_sep_batch(r, diffsq_by_best, nz, best):
    """(B,) separator statistics.

    diffsq_by_best: (B, n, k) squared column differences gathered per run's
    best arm; nz: (B, k) context counts.
    """
    b, n = r.shape
    denom = np.einsum("bik,bk->bi", diffsq_by_best, 1.0 / nz)
    rb = np.take_along_axis(r, best[:, None], axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        vals = (rb - r) ** 2 / (2.0 * denom)
    vals[np.arange(b), best] = np.inf
    vals[~np.isfinite(vals)] = np.inf
    return vals.min(axis=1)


def threshold_sep_batch(nz, cg_term: float) -> np.ndarray:
    """(B,) separator thresholds from (B, k) context counts."""
    inner = np.maximum(4.0 + np.log(nz), math.e)
    return 2.0 * np.sum(np.log(inner), axis=1) + cg_term


# ---------------------------------------------------------------------------
# Brute-force oracle
# ---------------------------------------------------------------------------

def glr_brute_oracle(state: EmpiricalState, a: np.ndarray, setting: str | None = None,
                     n_starts: int = 50, iters: int = 4000, seed: int = 0) -> float:
    """Numerically minimize the GLR objective over the alternative set.

    For every challenger s, minimizes the weighted squared distance from
    the empirical means over the halfspace where s beats the empirical
    best, using projected gradient descent from ``n_starts`` random starts
    (plus the empirical means and their Euclidean projection), and returns
    the smallest value over challengers.  Returns 0 when the alternative
    set already contains the empirical means.  Intended for n, k <= 3.
    """
    a = np.asarray(a, dtype=float)
    k, n = a.shape
    if setting is not None and setting != state.kind:
        raise ValueError(f"setting {setting!r} does not match state kind {state.kind!r}")
    if n > 3 or k > 3:
        raise ValueError(f"brute oracle is limited to n, k <= 3, got n={n}, k={k}")
    rng = np.random.default_rng(seed)
    if state.kind == NON_SEPARATOR:
        mu_hat = state.empirical_means()
        r = np.einsum("ji,ji->i", a, mu_hat)
        weights = state.n_joint.astype(float).ravel()
        center = mu_hat.ravel()
    else:
        mu_hat = state.empirical_means()
        r = mu_hat @ a
        weights = state.n_z.astype(float)
        center = mu_hat.copy()
    best = unique_argmax(r)
    if best is None:
        return 0.0
    best_val = np.inf
    for s in range(n):
        if s == best:
            continue
        if state.kind == NON_SEPARATOR:
            c = np.zeros((k, n))
            c[:, s] = a[:, s]
            c[:, best] -= a[:, best]
            c = c.ravel()
        else:
            c = a[:, s] - a[:, best]
        if not np.any(c != 0.0):
            continue
        val = _pgd_halfspace(center, weights, c, rng, n_starts, iters)
        best_val = min(best_val, val)
    return float(best_val)


def _pgd_halfspace(center, weights, c, rng, n_starts, iters):
    """min 0.5 * sum w_m (x_m - center_m)^2  s.t.  c @ x >= 0."""
    dim = center.shape[0]
    cnorm2 = float(c @ c)
    spread = 1.0 + float(np.max(np.abs(center)))
    starts = center[None, :] + spread * rng.standard_normal((n_starts, dim))
    proj_center = center - min(float(c @ center), 0.0) / cnorm2 * c
    x = np.vstack([starts, center[None, :], proj_center[None, :]])
    eta = 1.0 / float(weights.max())
    for _ in range(iters):
        x -= eta * weights * (x - center)
        viol = x @ c
        mask = viol < 0.0
        if np.any(mask):
            x[mask] -= (viol[mask] / cnorm2)[:, None] * c
    vals = 0.5 * np.sum(weights * (x - center) ** 2, axis=1)
    return float(vals.min())
