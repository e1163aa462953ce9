"""Track-and-stop algorithms: context-aware samplers and a context-blind baseline.

Three fixed-confidence identification algorithms share one engine:

* ``nsts``: cell-mean estimation with D-tracking of the optimal arm weights
  and the non-separator GLR/threshold pair.
* ``sts``: context-mean estimation; each round re-solves the separator
  weight problem at the empirical means, extends the ray from the realized
  context frequencies through the target (G-tracking), and plays the arm
  mixture certifying the ray's hull exit.
* ``ts``: the classic context-blind baseline on arm means with a
  variance-inflated sub-Gaussian GLR (sigma^2 = 1 + (hi-lo)^2/4).

The engine advances a batch of independent runs in lockstep, one array row
per run, which keeps per-round work vectorized.  A single run is a batch of
size one, and because every run draws from its own random stream with a
fixed per-round consumption pattern, batch and single-run trajectories are
bit-identical.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .env import RngStream
from .geometry import DegenerateRayError, FacetOracle, hull_membership, ray_exit
from .model import NON_SEPARATOR, SEPARATOR, Instance, best_arm
from .optim import _solve_nonsep_batch
from .stopping import (
    _log_log_term,
    c_g,
    glr_nonsep_batch,
    glr_sep_batch,
    threshold_sep_batch,
)

_TIE_TOL = 1e-12
_CHUNK = 512
_FW_ROUND_ITERS = 6
_FW_ROUND_TOL = 1e-5
_GAMMAS = np.geomspace(1.0, 1e-6, 16)


@dataclass(frozen=True)
class RunConfig:
    """Knobs shared by all algorithm runs."""

    delta: float
    max_rounds: int = 50_000_000
    recompute_every: int = 1  # weight recomputation cadence (1 = every round)
    trajectory_stride: int = 0  # 0 disables snapshots
    ts_mu_range: tuple[float, float] = (0.0, 10.0)

    def __post_init__(self):
        if not 0.0 < self.delta < 1.0:
            raise ValueError(f"delta must be in (0, 1), got {self.delta!r}")
        if self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.recompute_every < 1:
            raise ValueError("recompute_every must be >= 1")
        if self.trajectory_stride < 0:
            raise ValueError("trajectory_stride must be >= 0")
        lo, hi = self.ts_mu_range
        if not hi > lo:
            raise ValueError(f"ts_mu_range must satisfy lo < hi, got {self.ts_mu_range!r}")

    @property
    def ts_sigma_sq(self) -> float:
        lo, hi = self.ts_mu_range
        return 1.0 + (hi - lo) ** 2 / 4.0


@dataclass(frozen=True)
class TrajectoryPoint:
    round: int
    statistic: float
    threshold: float
    arm_freq: np.ndarray
    ctx_freq: np.ndarray


@dataclass
class RunResult:
    """Outcome of one identification run."""

    algo: str
    tau: int
    recommendation: int  # 0-based arm index
    correct: bool
    truncated: bool
    seed: int
    stream: int
    trajectory: list[TrajectoryPoint] = field(default_factory=list)


def d_track_next(state, w_star) -> int:
    """D-tracking rule: force any arm whose pull count is at most
    max(sqrt(t) - n/2, 0), otherwise play argmax of t*w_i - N_i.
    Ties resolve to the lowest arm index."""
    counts = np.asarray(state.n_x, dtype=float)
    weights = np.asarray(w_star, dtype=float)
    t = state.t
    n = counts.shape[0]
    floor = max(math.sqrt(t) - n / 2.0, 0.0)
    under = counts <= floor
    if np.any(under):
        return int(np.argmin(np.where(under, counts, np.inf)))
    return int(np.argmax(t * weights - counts))


def g_track_next(state, w_star, a: np.ndarray, rng,
                 certificate=None) -> int:
    """G-tracking rule: extend the ray from the realized context frequencies
    through the target context distribution ``w_star`` to the hull boundary
    and sample an arm from the exit point's certifying mixture.

    When the frequencies already sit on ``w_star`` (degenerate ray), the arm
    is drawn from ``w_star``'s own certificate — ``certificate`` if given,
    otherwise one recovered by hull membership.
    """
    a = np.asarray(a, dtype=float)
    w_star = np.asarray(w_star, dtype=float)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    origin = np.asarray(state.n_z, dtype=float) / state.t
    try:
        mixture = ray_exit(origin, w_star, a).mixture.pi
    except DegenerateRayError:
        cert = certificate if certificate is not None else hull_membership(w_star, a)
        if cert is None:
            raise ValueError("w_star is not in the hull of the context matrix")
        mixture = cert.pi
    cdf = np.cumsum(mixture)
    return min(int(np.searchsorted(cdf, gen.random(), side="right")), a.shape[1] - 1)


# ---------------------------------------------------------------------------
# Lockstep batch engine
# ---------------------------------------------------------------------------

class _ChunkedRng:
    """Per-run blocks of (arm uniform, context uniform, reward normal).

    Every round consumes one triple per run regardless of which parts the
    algorithm actually uses, so a run's trajectory does not depend on the
    batch it happens to share an engine with.
    """

    def __init__(self, rngs: list[RngStream]):
        self.gens = [r.generator() for r in rngs]
        b = len(rngs)
        self.u_arm = np.empty((b, _CHUNK))
        self.u_ctx = np.empty((b, _CHUNK))
        self.z = np.empty((b, _CHUNK))

    def refill(self):
        for i, g in enumerate(self.gens):
            self.u_arm[i] = g.random(_CHUNK)
            self.u_ctx[i] = g.random(_CHUNK)
            self.z[i] = g.standard_normal(_CHUNK)

    def compact(self, keep: np.ndarray):
        self.gens = [g for g, k in zip(self.gens, keep) if k]
        self.u_arm = self.u_arm[keep]
        self.u_ctx = self.u_ctx[keep]
        self.z = self.z[keep]


class _Snapshot:
    __slots__ = ("round", "orig", "stat", "thresh", "arm_freq", "ctx_freq")

    def __init__(self, round_, orig, stat, thresh, arm_freq, ctx_freq):
        self.round = round_
        self.orig = orig
        self.stat = stat
        self.thresh = thresh
        self.arm_freq = arm_freq
        self.ctx_freq = ctx_freq


class _Engine:
    """Shared lockstep driver; subclasses provide selection and testing."""

    algo = "?"

    def __init__(self, inst: Instance, config: RunConfig, rngs: list[RngStream]):
        self.inst = inst
        self.config = config
        self.streams = rngs
        self.a = inst.a
        self.k, self.n = inst.a.shape
        self.b = len(rngs)
        self.true_best = best_arm(inst)
        self.t = 0
        self.orig = np.arange(self.b)
        self.dead = np.zeros(self.b, dtype=bool)
        self.rng = _ChunkedRng(rngs)
        self.cdf_cols = np.cumsum(inst.a, axis=0).T  # (n, k), one row per arm
        self.n_x = np.zeros((self.b, self.n), dtype=np.int64)
        self.n_z = np.zeros((self.b, self.k), dtype=np.int64)
        self.results: list[RunResult | None] = [None] * self.b
        self.snapshots: list[_Snapshot] = []
        self.last_weights = np.full((self.b, self.n), 1.0 / self.n)

    # hooks -----------------------------------------------------------------
    def select_arms(self, u_arm: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def update(self, arms, ctxs, rewards):
        raise NotImplementedError

    def test(self):
        """Return (statistic, threshold, eligible) for the current batch."""
        raise NotImplementedError

    def _recommend(self) -> np.ndarray:
        raise NotImplementedError

    def compact_state(self, keep: np.ndarray):
        raise NotImplementedError

    def reward_means(self, ctxs, arms):
        if self.inst.kind == NON_SEPARATOR:
            return self.inst.mu[ctxs, arms]
        return self.inst.mu[ctxs]

    # driver ------------------------------------------------------------
    def run(self) -> list[RunResult]:
        cfg = self.config
        while self.b > 0 and self.t < cfg.max_rounds:
            off = self.t % _CHUNK
            if off == 0:
                self.rng.refill()
            u_arm = self.rng.u_arm[:, off]
            u_ctx = self.rng.u_ctx[:, off]
            z = self.rng.z[:, off]

            arms = self.select_arms(u_arm)
            cdf = self.cdf_cols[arms]  # (B, k)
            ctxs = np.minimum((cdf <= u_ctx[:, None]).sum(axis=1), self.k - 1)
            rewards = self.reward_means(ctxs, arms) + z
            rows = np.arange(self.b)
            self.n_x[rows, arms] += 1
            self.n_z[rows, ctxs] += 1
            self.update(arms, ctxs, rewards)
            self.t += 1

            stat, thresh, eligible = self.test()
            stop = eligible & (stat > thresh) & ~self.dead

            if cfg.trajectory_stride and self.t % cfg.trajectory_stride == 0:
                self.snapshots.append(_Snapshot(
                    self.t, self.orig.copy(), np.asarray(stat, dtype=float).copy(),
                    np.broadcast_to(thresh, np.shape(stat)).astype(float).copy(),
                    self.n_x / self.t, self.n_z / self.t))

            if np.any(stop):
                self._finish(stop, truncated=False)
                self.dead |= stop
                if self.dead.all() or self.dead.sum() >= 0.25 * self.b:
                    self._compact(~self.dead)
        if self.b > 0:
            self._finish(~self.dead, truncated=True)
        return self._assemble()

    # bookkeeping ---------------------------------------------------------
    def _finish(self, mask: np.ndarray, truncated: bool):
        rec = self._recommend()
        for i in np.flatnonzero(mask):
            o = int(self.orig[i])
            if self.results[o] is not None:
                continue
            arm = int(rec[i])
            self.results[o] = RunResult(
                algo=self.algo, tau=self.t, recommendation=arm,
                correct=arm == self.true_best, truncated=truncated,
                seed=self.streams[o].seed, stream=self.streams[o].stream)

    def _compact(self, keep: np.ndarray):
        self.orig = self.orig[keep]
        self.n_x = self.n_x[keep]
        self.n_z = self.n_z[keep]
        self.last_weights = self.last_weights[keep]
        self.rng.compact(keep)
        self.compact_state(keep)
        self.b = int(keep.sum())
        self.dead = np.zeros(self.b, dtype=bool)

    def _assemble(self) -> list[RunResult]:
        results = list(self.results)
        if self.config.trajectory_stride:
            for snap in self.snapshots:
                for i, o in enumerate(snap.orig):
                    r = results[o]
                    if r is None or snap.round > r.tau:
                        continue
                    r.trajectory.append(TrajectoryPoint(
                        round=snap.round, statistic=float(snap.stat[i]),
                        threshold=float(snap.thresh[i]),
                        arm_freq=snap.arm_freq[i].copy(),
                        ctx_freq=snap.ctx_freq[i].copy()))
        return results


def _top_two(values: np.ndarray):
    """Per-row argmax plus a flag for a tie at the top (within 1e-12)."""
    second = np.partition(values, values.shape[1] - 2, axis=1)[:, values.shape[1] - 2]
    best = np.argmax(values, axis=1)
    top = values[np.arange(values.shape[0]), best]
    return best, (top - second) <= _TIE_TOL


def _d_track_batch(counts: np.ndarray, weights: np.ndarray, t: int) -> np.ndarray:
    b, n = counts.shape
    floor = max(math.sqrt(t) - n / 2.0, 0.0)
    under = counts <= floor
    forced = np.argmin(np.where(under, counts, np.inf), axis=1)
    planned = np.argmax(t * weights - counts, axis=1)
    return np.where(under.any(axis=1), forced, planned)


def _uniform_arms(u_arm: np.ndarray, n: int) -> np.ndarray:
    return np.minimum((u_arm * n).astype(np.int64), n - 1)


class _NstsEngine(_Engine):
    algo = "nsts"

    def __init__(self, inst, config, rngs):
        if inst.kind != NON_SEPARATOR:
            raise ValueError("nsts requires a non-separator instance")
        super().__init__(inst, config, rngs)
        self.cell_n = np.zeros((self.b, self.k, self.n), dtype=np.int64)
        self.cell_sum = np.zeros((self.b, self.k, self.n))
        self.unseen = np.full(self.b, self.n * self.k)
        self.asq = self.a * self.a
        self.warm_root = np.full(self.b, np.nan)
        self.cg_const = 2.0 * self.k * c_g(
            math.log((self.n - 1) / config.delta) / (2.0 * self.k))

    def _stats(self):
        safe = np.maximum(self.cell_n, 1)
        mu_hat = self.cell_sum / safe
        r = np.einsum("ji,bji->bi", self.a, mu_hat)
        s_arr = np.einsum("ji,bji->bi", self.asq, 1.0 / safe)
        return r, s_arr

    def _init_arms(self):
        # pull the arm whose column carries the most probability mass on
        # still-empty (context, arm) cells
        zero = self.cell_n == 0
        scores = np.einsum("ji,bji->bi", self.a, zero)
        return np.argmax(scores, axis=1)

    def select_arms(self, u_arm):
        in_init = self.unseen > 0
        if in_init.all():
            return self._init_arms()
        r, _ = self._stats()
        best, tie = _top_two(r)
        good = ~in_init & ~tie
        if self.t % self.config.recompute_every == 0 and good.any():
            gaps = np.take_along_axis(r, best[:, None], axis=1) - r
            w, roots = _solve_nonsep_batch(gaps, best, warm=self.warm_root)
            self.last_weights = np.where(good[:, None], w, self.last_weights)
            self.warm_root = np.where(good, roots, self.warm_root)
        tracked = _d_track_batch(self.n_x, self.last_weights, self.t)
        chosen = np.where(tie, _uniform_arms(u_arm, self.n), tracked)
        if in_init.any():
            return np.where(in_init, self._init_arms(), chosen)
        return chosen

    def update(self, arms, ctxs, rewards):
        rows = np.arange(self.b)
        newly = self.cell_n[rows, ctxs, arms] == 0
        self.unseen -= newly
        self.cell_n[rows, ctxs, arms] += 1
        self.cell_sum[rows, ctxs, arms] += rewards

    def test(self):
        eligible = self.unseen == 0
        if not eligible.any():
            return np.zeros(self.b), np.inf, eligible
        r, s_arr = self._stats()
        best, tie = _top_two(r)
        stat = np.where(tie, 0.0, glr_nonsep_batch(r, s_arr, best))
        thresh = (4.0 * self.k * _log_log_term(self.t / (2.0 * self.k))
                  + self.cg_const)
        return stat, thresh, eligible

    def _recommend(self):
        r, _ = self._stats()
        return np.argmax(r, axis=1)

    def compact_state(self, keep):
        self.cell_n = self.cell_n[keep]
        self.cell_sum = self.cell_sum[keep]
        self.unseen = self.unseen[keep]
        self.warm_root = self.warm_root[keep]


class _TsEngine(_Engine):
    """Context-blind baseline: arm means, inflated variance, D-tracking."""

    algo = "ts"

    def __init__(self, inst, config, rngs):
        super().__init__(inst, config, rngs)
        self.x_sum = np.zeros((self.b, self.n))
        self.sigma_sq = config.ts_sigma_sq
        self.warm_root = np.full(self.b, np.nan)
        self.cg_const = 2.0 * c_g(math.log((self.n - 1) / config.delta) / 2.0)

    def select_arms(self, u_arm):
        if self.t < self.n:  # play each arm once, in index order
            return np.full(self.b, self.t, dtype=np.int64)
        means = self.x_sum / self.n_x
        best, tie = _top_two(means)
        good = ~tie
        if self.t % self.config.recompute_every == 0 and good.any():
            gaps = np.take_along_axis(means, best[:, None], axis=1) - means
            gaps /= math.sqrt(self.sigma_sq)
            w, roots = _solve_nonsep_batch(gaps, best, warm=self.warm_root)
            self.last_weights = np.where(good[:, None], w, self.last_weights)
            self.warm_root = np.where(good, roots, self.warm_root)
        tracked = _d_track_batch(self.n_x, self.last_weights, self.t)
        return np.where(tie, _uniform_arms(u_arm, self.n), tracked)

    def update(self, arms, ctxs, rewards):
        self.x_sum[np.arange(self.b), arms] += rewards

    def test(self):
        if self.t < self.n:
            return np.zeros(self.b), np.inf, np.zeros(self.b, dtype=bool)
        means = self.x_sum / self.n_x
        best, tie = _top_two(means)
        s_arr = self.sigma_sq / self.n_x
        stat = np.where(tie, 0.0, glr_nonsep_batch(means, s_arr, best))
        thresh = 4.0 * _log_log_term(self.t / 2.0) + self.cg_const
        return stat, thresh, np.ones(self.b, dtype=bool)

    def _recommend(self):
        means = self.x_sum / np.maximum(self.n_x, 1)
        return np.argmax(means, axis=1)

    def compact_state(self, keep):
        self.x_sum = self.x_sum[keep]
        self.warm_root = self.warm_root[keep]


class _StsEngine(_Engine):
    algo = "sts"

    def __init__(self, inst, config, rngs):
        if inst.kind != SEPARATOR:
            raise ValueError("sts requires a separator instance")
        super().__init__(inst, config, rngs)
        self.z_sum = np.zeros((self.b, self.k))
        self.unseen = np.full(self.b, self.k)
        # (p, i, j) -> (A[j,p] - A[j,i])^2, gathered per run by its best arm.
        diffs = self.a.T[:, None, :] - self.a.T[None, :, :]
        self.diffsq = diffs ** 2  # (n, n, k)
        self.col_max_prob = self.a.max(axis=1)  # (k,)
        self.col_best_arm = np.argmax(self.a, axis=1)  # (k,)
        self.facets = FacetOracle(self.a)
        self.pi = np.full((self.b, self.n), 1.0 / self.n)
        self.w = self.pi @ self.a.T
        self.cg_const = self.k * c_g(math.log(1.0 / config.delta) / self.k)

    def _rewards(self):
        mu_hat = self.z_sum / np.maximum(self.n_z, 1)
        return mu_hat @ self.a

    def _init_arms(self):
        # cover contexts: aim at the still-unseen context that is hardest to
        # reach, using the arm most likely to produce it
        unseen_ctx = self.n_z == 0  # (B, k)
        rarity = np.where(unseen_ctx, self.col_max_prob[None, :], np.inf)
        jstar = np.argmin(rarity, axis=1)
        return self.col_best_arm[jstar]

    def select_arms(self, u_arm):
        in_init = self.unseen > 0
        if in_init.all():
            return self._init_arms()
        r = self._rewards()
        best, tie = _top_two(r)
        active = ~in_init & ~tie
        if self.t % self.config.recompute_every == 0 and active.any():
            self._fw_update(r, best, active)
        mixture = self._g_track_mixtures(active)
        cdf = np.cumsum(mixture, axis=1)
        drawn = np.minimum((cdf <= u_arm[:, None]).sum(axis=1), self.n - 1)
        chosen = np.where(tie, _uniform_arms(u_arm, self.n), drawn)
        if in_init.any():
            return np.where(in_init, self._init_arms(), chosen)
        return chosen

    def _fw_update(self, r, best, active):
        """A few vectorized Frank-Wolfe steps per round, warm-started from
        the previous round's arm mixture."""
        d2 = (np.take_along_axis(r, best[:, None], axis=1) - r) ** 2  # (B, n)
        csq = self.diffsq[best]  # (B, n, k)
        rows = np.arange(self.b)
        live = active.copy()
        for _ in range(_FW_ROUND_ITERS):
            winv = 1.0 / np.maximum(self.w, 1e-300)
            denom = np.einsum("bik,bk->bi", csq, winv)
            denom[rows, best] = np.inf
            vals = d2 / (2.0 * denom)
            vals[rows, best] = np.inf
            f = vals.min(axis=1)
            c = np.argmin(vals, axis=1)
            dc = denom[rows, c]
            grad = ((d2[rows, c] / (2.0 * dc * dc))[:, None]
                    * csq[rows, c] * winv * winv)
            scores = grad @ self.a  # (B, n)
            v = np.argmax(scores, axis=1)
            gap = scores[rows, v] - np.einsum("bk,bk->b", grad, self.w)
            live = live & (gap > _FW_ROUND_TOL * np.maximum(np.abs(f), 1e-12))
            if not live.any():
                break
            dw = self.a.T[v] - self.w  # (B, k)
            cand_w = self.w[:, None, :] + _GAMMAS[None, :, None] * dw[:, None, :]
            cd = np.einsum("bik,bgk->bgi", csq, 1.0 / np.maximum(cand_w, 1e-300))
            cd[rows, :, best] = np.inf
            cvals = d2[:, None, :] / (2.0 * cd)
            cvals[rows, :, best] = np.inf
            cf = cvals.min(axis=2)  # (B, G)
            gi = np.argmax(cf, axis=1)
            improved = cf[rows, gi] > f * (1.0 + 1e-12)
            step = live & improved
            if not step.any():
                break
            gamma = np.where(step, _GAMMAS[gi], 0.0)
            self.pi *= (1.0 - gamma)[:, None]
            self.pi[rows, v] += gamma
            self.w = self.pi @ self.a.T

    def _g_track_mixtures(self, active):
        mixture = self.pi.copy()
        if self.k == 1 or self.t == 0 or not active.any():
            return mixture
        origins = self.n_z / self.t
        if self.facets.available:
            _, _, mixes = self.facets.exit_batch(origins, self.w)
            degenerate = np.isnan(mixes[:, 0])
            mixes[degenerate] = self.pi[degenerate]
            mixture[active] = mixes[active]
        else:
            for i in np.flatnonzero(active):
                try:
                    mixture[i] = ray_exit(origins[i], self.w[i], self.a).mixture.pi
                except DegenerateRayError:
                    mixture[i] = self.pi[i]
        return mixture

    def update(self, arms, ctxs, rewards):
        rows = np.arange(self.b)
        # the driver already bumped n_z, so a count of 1 means newly seen
        newly = self.n_z[rows, ctxs] == 1
        self.unseen -= newly
        self.z_sum[rows, ctxs] += rewards

    def test(self):
        eligible = self.unseen == 0
        if not eligible.any():
            return np.zeros(self.b), np.inf, eligible
        r = self._rewards()
        best, tie = _top_two(r)
        nz = np.maximum(self.n_z, 1)
        stat = np.where(tie, 0.0, glr_sep_batch(r, self.diffsq[best], nz, best))
        thresh = threshold_sep_batch(nz, self.cg_const)
        return stat, thresh, eligible

    def _recommend(self):
        return np.argmax(self._rewards(), axis=1)

    def compact_state(self, keep):
        self.z_sum = self.z_sum[keep]
        self.unseen = self.unseen[keep]
        self.pi = self.pi[keep]
        self.w = self.w[keep]


_ENGINES = {"nsts": _NstsEngine, "sts": _StsEngine, "ts": _TsEngine}
ALGORITHMS = tuple(_ENGINES)


def run_batch(algo: str, inst: Instance, config: RunConfig,
              rngs: list[RngStream]) -> list[RunResult]:
    """Run a batch of independent trials of one algorithm in lockstep."""
    if algo not in _ENGINES:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {ALGORITHMS}")
    if algo == "nsts" and inst.kind != NON_SEPARATOR:
        raise ValueError(f"nsts requires a non-separator instance, got {inst.kind}")
    if algo == "sts" and inst.kind != SEPARATOR:
        raise ValueError(f"sts requires a separator instance, got {inst.kind}")
    if not rngs:
        return []
    return _ENGINES[algo](inst, config, rngs).run()


def nsts_run(inst: Instance, config: RunConfig, rng: RngStream) -> RunResult:
    """Cell-mean track-and-stop on a non-separator instance."""
    return run_batch("nsts", inst, config, [rng])[0]


def sts_run(inst: Instance, config: RunConfig, rng: RngStream) -> RunResult:
    """Context-mean track-and-stop on a separator instance."""
    return run_batch("sts", inst, config, [rng])[0]


def ts_baseline_run(inst: Instance, config: RunConfig, rng: RngStream) -> RunResult:
    """Context-blind track-and-stop baseline (works on either instance kind)."""
    return run_batch("ts", inst, config, [rng])[0]
