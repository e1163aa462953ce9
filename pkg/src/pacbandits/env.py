"""Sampling environment and random instance generation.

Rewards are unit-variance Gaussians around the cell (or context) mean.
Random instances follow the benchmark recipe: uniform means on a bounded
range, Dirichlet(1) context columns with an entry floor, arm 1 forced to
be best, and per-arm gap bands ``[1/(2n), (i+1)/(2n)]`` for arm ``i >= 2``
(1-based).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import (
    NON_SEPARATOR,
    SEPARATOR,
    Instance,
    InstanceError,
    expected_rewards,
    validate_context_matrix,
)


@dataclass(frozen=True)
class RngStream:
    """A named, reproducible random stream: (seed, stream id) -> Generator.

    The same (seed, stream) pair always yields an identical sequence, and
    distinct stream ids derived from one seed are statistically independent.
    """

    seed: int
    stream: int = 0

    def generator(self) -> np.random.Generator:
        ss = np.random.SeedSequence(self.seed, spawn_key=(self.stream,))
        return np.random.Generator(np.random.PCG64(ss))


def default_gap_bands(n: int) -> list[tuple[float, float]]:
    """Gap band for each suboptimal arm i (0-based): [1/(2n), (i+2)/(2n)]."""
    return [(1.0 / (2 * n), (i + 2) / (2 * n)) for i in range(1, n)]


@dataclass(frozen=True)
class GenConstraints:
    """Sizes and knobs of the random-instance generator."""

    n: int
    k: int
    mu_range: tuple[float, float] = (0.0, 10.0)
    a_min_floor: float | None = None  # defaults to 1/(4k)
    gap_bands: list[tuple[float, float]] | None = None  # defaults per arm
    max_tries: int = 100_000

    def __post_init__(self):
        if self.n < 2 or self.k < 1:
            raise ValueError(f"need n >= 2 and k >= 1, got n={self.n}, k={self.k}")
        lo, hi = self.mu_range
        if not hi > lo:
            raise ValueError(f"mu_range: need lo < hi, got {self.mu_range}")
        if self.a_min_floor is not None and not 0 < self.a_min_floor <= 1.0 / self.k:
            raise ValueError(
                f"a_min_floor {self.a_min_floor!r} must be in (0, 1/k] for k={self.k}")
        for g_lo, g_hi in self.bands:
            if not (0 < g_lo <= g_hi < hi - lo):
                raise ValueError(
                    f"gap band ({g_lo}, {g_hi}) not inside (0, {hi - lo})")
        if self.max_tries < 1:
            raise ValueError("max_tries must be >= 1")

    @property
    def floor(self) -> float:
        return self.a_min_floor if self.a_min_floor is not None else 1.0 / (4 * self.k)

    @property
    def bands(self) -> list[tuple[float, float]]:
        bands = (self.gap_bands if self.gap_bands is not None
                 else default_gap_bands(self.n))
        if len(bands) != self.n - 1:
            raise ValueError(
                f"gap_bands: expected {self.n - 1} bands for n={self.n}, got {len(bands)}")
        return bands


def _as_generator(rng) -> np.random.Generator:
    return rng.generator() if isinstance(rng, RngStream) else rng


def sample_step(inst: Instance, arm: int, rng) -> tuple[int, float]:
    """Play one round: draw the post-action context, then the Gaussian reward.

    ``rng`` may be a stateful ``numpy.random.Generator`` (advances across
    calls) or an ``RngStream`` (gives that stream's first draw every time).

    Returns:
        (context index, reward), both for the given arm.
    """
    if not 0 <= arm < inst.n:
        raise ValueError(f"arm index {arm} out of range [0, {inst.n})")
    gen = _as_generator(rng)
    cdf = np.cumsum(inst.a[:, arm])
    ctx = int(np.searchsorted(cdf, gen.random(), side="right"))
    ctx = min(ctx, inst.k - 1)  # guard the u == 1 edge
    mean = inst.mu[ctx, arm] if inst.kind == NON_SEPARATOR else inst.mu[ctx]
    return ctx, float(mean + gen.standard_normal())


def _sample_context_matrix(n: int, k: int, floor: float, gen: np.random.Generator,
                           budget: int) -> tuple[np.ndarray, int]:
    """Draw each column from Dirichlet(1,...,1), rejecting entries below the floor."""
    if floor >= 1.0 / k:
        raise ValueError(f"a_min floor {floor:.6g} is infeasible for k={k}")
    cols = []
    tries = 0
    while len(cols) < n:
        tries += 1
        if tries > budget:
            raise RuntimeError(
                f"context-matrix sampling exceeded {budget} tries (floor {floor:.6g}, k={k})"
            )
        col = gen.dirichlet(np.ones(k))
        if col.min() >= floor:
            cols.append(col)
    a = np.column_stack(cols)
    # Renormalize columns exactly: Dirichlet draws can be 1e-16 off.
    a /= a.sum(axis=0, keepdims=True)
    return a, tries


def gen_random_instance(c: GenConstraints, kind: str, rng) -> Instance:
    """Generate a random instance with arm 1 best and in-band gaps.

    Non-separator means are drawn uniformly on ``mu_range`` and each
    suboptimal arm's column is shifted by a constant so its expected reward
    hits a uniformly drawn target gap; shifts that leave the range are
    rejected.  Separator instances are drawn by pure rejection on the gap
    bands.

    Raises:
        RuntimeError: if the rejection budget is exhausted.
    """
    if kind not in (NON_SEPARATOR, SEPARATOR):
        raise ValueError(f"kind: expected non_separator or separator, got {kind!r}")
    n, k = c.n, c.k
    lo, hi = c.mu_range
    floor = c.floor
    bands = c.bands
    gen = _as_generator(rng)
    budget = c.max_tries

    for attempt in range(budget):
        a, used = _sample_context_matrix(n, k, floor, gen, budget)
        budget -= used
        if kind == NON_SEPARATOR:
            mu = np.empty((k, n))
            mu[:, 0] = gen.uniform(lo, hi, size=k)
            r_best = float(a[:, 0] @ mu[:, 0])
            ok = True
            for i in range(1, n):
                g_lo, g_hi = bands[i - 1]
                placed = False
                for _ in range(200):
                    target_gap = gen.uniform(g_lo, g_hi)
                    col = gen.uniform(lo, hi, size=k)
                    shift = (r_best - target_gap) - float(a[:, i] @ col)
                    col = col + shift
                    if col.min() >= lo - 1e-12 and col.max() <= hi + 1e-12:
                        mu[:, i] = np.clip(col, lo, hi)
                        placed = True
                        break
                if not placed:
                    ok = False
                    break
            if not ok:
                continue
            inst = Instance(kind=kind, a=a, mu=mu)
        else:
            mu = gen.uniform(lo, hi, size=k)
            try:
                inst = Instance(kind=kind, a=a, mu=mu)
            except InstanceError:
                continue

        r = expected_rewards(inst)
        if int(np.argmax(r)) != 0:
            continue
        inst_gaps = r[0] - r
        in_band = all(
            bands[i - 1][0] <= inst_gaps[i] <= bands[i - 1][1] for i in range(1, n)
        )
        if in_band:
            return inst

    raise RuntimeError(
        f"instance generation exhausted {c.max_tries} tries "
        f"(kind={kind}, n={n}, k={k}); loosen the gap bands or range"
    )
