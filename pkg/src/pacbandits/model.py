"""Core problem model: instances, empirical state, and derived quantities.

An instance couples a context-probability matrix ``A`` (shape ``(k, n)``,
column ``i`` is the distribution of the post-action context when arm ``i``
is played) with Gaussian mean parameters.  Two reward structures are
supported:

* ``non_separator``: the mean reward depends on the (context, arm) cell,
  ``mu`` has shape ``(k, n)`` and ``E[Y | X=i] = A[:, i] @ mu[:, i]``.
* ``separator``: the mean reward depends on the context only, ``mu`` has
  shape ``(k,)`` and ``E[Y | X=i] = A[:, i] @ mu``.

Arm and context indices are 0-based everywhere in code; file formats and
CLI output use 1-based indices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

COLUMN_SUM_TOL = 1e-12
TIE_TOL = 1e-12
SIMPLEX_TOL = 1e-10

NON_SEPARATOR = "non_separator"
SEPARATOR = "separator"
KINDS = (NON_SEPARATOR, SEPARATOR)


class InstanceError(ValueError):
    """Raised when instance data violates the model contract."""


class NotInitializedError(RuntimeError):
    """Raised when an empirical quantity is requested before its first sample."""


def validate_context_matrix(a, a_min: float = 0.0) -> np.ndarray:
    """Validate a context-probability matrix and return it as a float array.

    Every entry must be strictly positive (and at least ``a_min`` when
    given), and every column must sum to 1 within ``1e-12``.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim != 2:
        raise InstanceError(f"A: expected a 2-d matrix, got shape {a.shape}")
    k, n = a.shape
    if k < 1 or n < 2:
        raise InstanceError(f"A: need k >= 1 contexts and n >= 2 arms, got k={k}, n={n}")
    if not np.all(np.isfinite(a)):
        raise InstanceError("A: entries must be finite")
    if np.any(a <= 0.0):
        j, i = np.argwhere(a <= 0.0)[0]
        raise InstanceError(
            f"A: entry at context {j + 1}, arm {i + 1} is {a[j, i]!r}; all entries must be > 0"
        )
    if a_min > 0.0 and np.any(a < a_min - 1e-15):
        j, i = np.argwhere(a < a_min - 1e-15)[0]
        raise InstanceError(
            f"A: entry at context {j + 1}, arm {i + 1} is {a[j, i]:.6g}, below the floor {a_min:.6g}"
        )
    col_sums = a.sum(axis=0)
    bad = np.abs(col_sums - 1.0) > COLUMN_SUM_TOL
    if np.any(bad):
        i = int(np.argmax(bad))
        raise InstanceError(f"A: column {i + 1} sums to {col_sums[i]!r}, expected 1 within 1e-12")
    return a


def check_simplex(v, tol: float = SIMPLEX_TOL, name: str = "weights") -> np.ndarray:
    """Validate a probability vector (nonnegative, sums to 1 within ``tol``)."""
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name}: expected a vector, got shape {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name}: entries must be finite")
    if np.any(v < -tol):
        raise ValueError(f"{name}: negative entry {v.min()!r}")
    s = v.sum()
    if abs(s - 1.0) > tol:
        raise ValueError(f"{name}: sums to {s!r}, expected 1 within {tol:g}")
    return v


@dataclass(frozen=True)
class Instance:
    """A fully specified bandit instance.

    Attributes:
        kind: ``"non_separator"`` or ``"separator"``.
        a: context matrix, shape ``(k, n)``, column-stochastic.
        mu: mean parameters, shape ``(k, n)`` for non-separator instances
            or ``(k,)`` for separator instances.
    """

    kind: str
    a: np.ndarray
    mu: np.ndarray

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InstanceError(f"kind: expected one of {KINDS}, got {self.kind!r}")
        a = validate_context_matrix(self.a)
        mu = np.asarray(self.mu, dtype=float)
        if not np.all(np.isfinite(mu)):
            raise InstanceError("mu: entries must be finite")
        k, n = a.shape
        if self.kind == NON_SEPARATOR:
            if mu.shape != (k, n):
                raise InstanceError(f"mu: expected shape ({k}, {n}), got {mu.shape}")
        else:
            if mu.shape != (k,):
                raise InstanceError(f"mu: expected shape ({k},), got {mu.shape}")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "mu", mu)
        # Instances must have a unique best arm (ties within 1e-12 rejected).
        r = expected_rewards(self)
        order = np.sort(r)
        if order[-1] - order[-2] <= TIE_TOL:
            raise InstanceError(
                f"instance has no unique best arm: top expected rewards "
                f"{order[-1]!r} and {order[-2]!r} tie within 1e-12"
            )

    @property
    def k(self) -> int:
        return self.a.shape[0]

    @property
    def n(self) -> int:
        return self.a.shape[1]


def expected_rewards(inst: Instance) -> np.ndarray:
    """Expected reward of every arm: ``r[i] = A[:, i] @ mu[:, i]`` (or ``@ mu``)."""
    if inst.kind == NON_SEPARATOR:
        return np.einsum("ji,ji->i", inst.a, inst.mu)
    return inst.mu @ inst.a


def expected_reward(inst: Instance, arm: int) -> float:
    """Expected reward of one arm, ``A[:, arm] @ mu[:, arm]`` (or ``@ mu``)."""
    if not 0 <= arm < inst.n:
        raise ValueError(f"arm index {arm} out of range [0, {inst.n})")
    col = inst.mu[:, arm] if inst.kind == NON_SEPARATOR else inst.mu
    return float(inst.a[:, arm] @ col)


def best_arm(inst: Instance) -> int:
    """Index of the unique best arm (guaranteed by instance validation)."""
    return int(np.argmax(expected_rewards(inst)))


def gaps(inst: Instance) -> np.ndarray:
    """Suboptimality gaps ``r[best] - r[i]`` (zero at the best arm)."""
    r = expected_rewards(inst)
    return r.max() - r


def unique_argmax(values, tol: float = TIE_TOL):
    """Return ``argmax`` if it is unique within ``tol``, else ``None``.

    Ties are detected on the raw values: any second value within ``tol``
    of the maximum makes the argmax non-unique.
    """
    values = np.asarray(values, dtype=float)
    top = int(np.argmax(values))
    vmax = values[top]
    near = np.flatnonzero(values >= vmax - tol)
    if near.size > 1:
        return None
    return top


@dataclass
class EmpiricalState:
    """Mutable sufficient statistics of a run.

    ``reward_sums`` is per (context, arm) cell for non-separator instances
    and per context for separator instances.  The count identities
    ``n_joint.sum(axis=0) == n_x``, ``n_joint.sum(axis=1) == n_z`` and
    ``n_x.sum() == n_z.sum() == t`` hold after every update.
    """

    kind: str
    n: int
    k: int
    t: int = 0
    n_x: np.ndarray = field(default=None)
    n_z: np.ndarray = field(default=None)
    n_joint: np.ndarray = field(default=None)
    reward_sums: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InstanceError(f"kind: expected one of {KINDS}, got {self.kind!r}")
        if self.n_x is None:
            self.n_x = np.zeros(self.n, dtype=np.int64)
        if self.n_z is None:
            self.n_z = np.zeros(self.k, dtype=np.int64)
        if self.n_joint is None:
            self.n_joint = np.zeros((self.k, self.n), dtype=np.int64)
        if self.reward_sums is None:
            shape = (self.k, self.n) if self.kind == NON_SEPARATOR else (self.k,)
            self.reward_sums = np.zeros(shape, dtype=float)

    def update(self, arm: int, ctx: int, reward: float) -> None:
        """Record one (arm, context, reward) observation."""
        if not 0 <= arm < self.n:
            raise ValueError(f"arm index {arm} out of range [0, {self.n})")
        if not 0 <= ctx < self.k:
            raise ValueError(f"context index {ctx} out of range [0, {self.k})")
        self.t += 1
        self.n_x[arm] += 1
        self.n_z[ctx] += 1
        self.n_joint[ctx, arm] += 1
        if self.kind == NON_SEPARATOR:
            self.reward_sums[ctx, arm] += reward
        else:
            self.reward_sums[ctx] += reward

    def empirical_means(self) -> np.ndarray:
        """Empirical mean estimates (per cell or per context, matching ``kind``).

        Raises:
            NotInitializedError: if any required count is still zero.
        """
        if self.kind == NON_SEPARATOR:
            if np.any(self.n_joint == 0):
                j, i = np.argwhere(self.n_joint == 0)[0]
                raise NotInitializedError(
                    f"cell (context {j + 1}, arm {i + 1}) has no samples yet"
                )
            return self.reward_sums / self.n_joint
        if np.any(self.n_z == 0):
            j = int(np.argmax(self.n_z == 0))
            raise NotInitializedError(f"context {j + 1} has no samples yet")
        return self.reward_sums / self.n_z

    def empirical_rewards(self, a: np.ndarray) -> np.ndarray:
        """Plug-in expected reward per arm from the empirical means."""
        mu_hat = self.empirical_means()
        if self.kind == NON_SEPARATOR:
            return np.einsum("ji,ji->i", a, mu_hat)
        return mu_hat @ a


def empirical_means(state: EmpiricalState) -> np.ndarray:
    """Module-level alias for :meth:`EmpiricalState.empirical_means`."""
    return state.empirical_means()


def instance_to_dict(inst: Instance) -> dict:
    mu = inst.mu.tolist()
    return {
        "kind": inst.kind,
        "n": inst.n,
        "k": inst.k,
        "A": inst.a.tolist(),
        "mu": mu,
    }


def instance_from_dict(obj: dict) -> Instance:
    for key in ("kind", "n", "k", "A", "mu"):
        if key not in obj:
            raise InstanceError(f"instance file: missing key {key!r}")
    kind = obj["kind"]
    if kind not in KINDS:
        raise InstanceError(f"kind: expected one of {KINDS}, got {kind!r}")
    a = np.asarray(obj["A"], dtype=float)
    if a.ndim != 2:
        raise InstanceError(f"A: expected k x n nested lists, got shape {a.shape}")
    k, n = a.shape
    if n != int(obj["n"]) or k != int(obj["k"]):
        raise InstanceError(
            f"A: shape {a.shape} disagrees with declared k={obj['k']}, n={obj['n']}"
        )
    mu = np.asarray(obj["mu"], dtype=float)
    return Instance(kind=kind, a=a, mu=mu)


def save_instance(inst: Instance, path) -> None:
    with open(path, "w") as fh:
        json.dump(instance_to_dict(inst), fh, indent=2)
        fh.write("\n")


def load_instance(path) -> Instance:
    with open(path) as fh:
        try:
            obj = json.load(fh)
        except json.JSONDecodeError as exc:
            raise InstanceError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    try:
        return instance_from_dict(obj)
    except InstanceError as exc:
        raise InstanceError(f"{path}: {exc}") from exc
