import numpy as np
import pytest

from pacbandits import NON_SEPARATOR, SEPARATOR, EmpiricalState, Instance

# Three-arm, three-context separator benchmark used throughout: rewards are
# (0.912, 0.928, 0.280), best arm index 1, gaps (0.016, 0, 0.648), and the
# optimal context weights coincide with the third column of A.
ANCHOR_MU = np.array([1.0, 0.1, 0.3])
ANCHOR_A = np.array([
    [0.90, 0.90, 0.10],
    [0.09, 0.01, 0.45],
    [0.01, 0.09, 0.45],
])


@pytest.fixture(scope="session")
def anchor_instance() -> Instance:
    return Instance(kind=SEPARATOR, a=ANCHOR_A.copy(), mu=ANCHOR_MU.copy())


@pytest.fixture(scope="session")
def easy_nonsep() -> Instance:
    # arm 0 clearly best: rewards (1.55, 0.85)
    a = np.array([[0.7, 0.3], [0.3, 0.7]])
    mu = np.array([[2.0, 0.5], [0.5, 1.0]])
    return Instance(kind=NON_SEPARATOR, a=a, mu=mu)


@pytest.fixture(scope="session")
def easy_sep() -> Instance:
    # wide reward spread so runs stop quickly
    a = np.array([[0.8, 0.1], [0.2, 0.9]])
    mu = np.array([5.0, 0.0])
    return Instance(kind=SEPARATOR, a=a, mu=mu)


def make_nonsep_state(cell_counts, cell_means) -> EmpiricalState:
    """Build a post-initialization non-separator state with exact cell means."""
    counts = np.asarray(cell_counts, dtype=np.int64)
    means = np.asarray(cell_means, dtype=float)
    k, n = counts.shape
    state = EmpiricalState(kind=NON_SEPARATOR, n=n, k=k)
    state.t = int(counts.sum())
    state.n_joint = counts.copy()
    state.n_x = counts.sum(axis=0)
    state.n_z = counts.sum(axis=1)
    state.reward_sums = means * counts
    return state


def make_sep_state(ctx_counts, ctx_means, n: int) -> EmpiricalState:
    """Build a post-initialization separator state with exact context means."""
    counts = np.asarray(ctx_counts, dtype=np.int64)
    means = np.asarray(ctx_means, dtype=float)
    k = counts.shape[0]
    state = EmpiricalState(kind=SEPARATOR, n=n, k=k)
    state.t = int(counts.sum())
    state.n_z = counts.copy()
    # spread arm pulls arbitrarily; separator statistics ignore them
    state.n_x = np.full(n, state.t // n, dtype=np.int64)
    state.n_x[0] += state.t - state.n_x.sum()
    state.n_joint = np.zeros((k, n), dtype=np.int64)
    state.n_joint[:, 0] = counts
    state.reward_sums = means * counts
    return state


def random_nonsep_state(rng: np.random.Generator, n: int, k: int,
                        max_count: int = 50) -> EmpiricalState:
    counts = rng.integers(1, max_count + 1, size=(k, n))
    means = rng.normal(0.0, 2.0, size=(k, n))
    return make_nonsep_state(counts, means)


def random_sep_state(rng: np.random.Generator, n: int, k: int,
                     max_count: int = 50) -> EmpiricalState:
    counts = rng.integers(1, max_count + 1, size=k)
    means = rng.normal(0.0, 2.0, size=k)
    return make_sep_state(counts, means, n)


def random_context_matrix(rng: np.random.Generator, n: int, k: int,
                          floor: float = 0.02) -> np.ndarray:
    while True:
        a = rng.dirichlet(np.ones(k), size=n).T
        if a.min() >= floor:
            return a
