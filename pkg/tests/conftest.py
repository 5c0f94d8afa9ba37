"""Shared fixtures.

Heavy trainings are session-scoped so the acceptance criteria that share a
configuration reuse one run. Setting MICMFG_TEST_CACHE to a directory keeps
trained solvers on disk between sessions (a development convenience; by
default everything is computed fresh).
"""

import os
import pickle

import pytest

from micmfg import cases, deepbsde, riccati

_CACHE_SALT = "v1"


def _cache_path(key):
    root = os.environ.get("MICMFG_TEST_CACHE")
    if not root:
        return None
    os.makedirs(root, exist_ok=True)
    return os.path.join(root, f"{key}-{_CACHE_SALT}.pkl")


class RelErrSnapshots:
    """Training callback recording curve accuracy at chosen iterations."""

    def __init__(self, oracle, checkpoints):
        self.oracle = oracle
        self.checkpoints = set(checkpoints)
        self.values = {}

    def __call__(self, it, result):
        if it + 1 in self.checkpoints:
            self.values[it + 1] = deepbsde.curve_relative_error(
                result.vbar, result.z, self.oracle
            )


def train_cached(key, params, reward, config, oracle=None, snapshots=None):
    path = _cache_path(key)
    if path and os.path.exists(path):
        with open(path, "rb") as fh:
            return pickle.load(fh)
    callback = RelErrSnapshots(oracle, snapshots) if snapshots else None
    solver = deepbsde.train(params, reward, config, oracle=oracle, callback=callback)
    result = (solver, callback.values if callback else {})
    if path:
        with open(path, "wb") as fh:
            pickle.dump(result, fh)
    return result


@pytest.fixture(scope="session")
def baseline_unconstrained():
    params, reward, lam = cases.make_case("1a", constrained=False)
    return params, reward, lam


@pytest.fixture(scope="session")
def oracle_1a(baseline_unconstrained):
    params, reward, _ = baseline_unconstrained
    return riccati.solve(params, reward, n_grid=1000)


@pytest.fixture(scope="session")
def oracle_2a():
    params, reward, _ = cases.make_case("2a", constrained=False)
    return riccati.solve(params, reward, n_grid=1000)


# ---------------------------------------------------------------------------
# Heavy trained solvers shared across acceptance criteria
# ---------------------------------------------------------------------------


@pytest.fixture(scope="session")
def paper_1a_unconstrained(baseline_unconstrained, oracle_1a):
    params, reward, lam = baseline_unconstrained
    config = cases.training_profile("paper", seed=0, penalty=lam)
    return train_cached("paper-1a-unc-s0", params, reward, config,
                        oracle=oracle_1a, snapshots=(100, 300, 1000))


@pytest.fixture(scope="session")
def desk_1a_unconstrained(baseline_unconstrained, oracle_1a):
    params, reward, lam = baseline_unconstrained
    config = cases.training_profile("desk", seed=0, penalty=lam)
    return train_cached("desk-1a-unc-s0", params, reward, config, oracle=oracle_1a)


@pytest.fixture(scope="session")
def paper_1a_constrained():
    params, reward, lam = cases.make_case("1a", constrained=True)
    config = cases.training_profile("paper", seed=0, penalty=lam)
    return train_cached("paper-1a-con-s0", params, reward, config)


@pytest.fixture(scope="session")
def paper_5_constrained():
    params, reward, lam = cases.make_case("5", constrained=True)
    config = cases.training_profile("paper", seed=0, penalty=lam)
    return train_cached("paper-5-con-s0", params, reward, config)


@pytest.fixture(scope="session")
def paper_5_unconstrained():
    params, reward, lam = cases.make_case("5", constrained=False)
    config = cases.training_profile("paper", seed=0, penalty=lam)
    return train_cached("paper-5-unc-s0", params, reward, config)


@pytest.fixture(scope="session")
def desk_2a_constrained():
    params, reward, lam = cases.make_case("2a", constrained=True)
    config = cases.training_profile("desk", seed=0, penalty=lam)
    return train_cached("desk-2a-con-s0", params, reward, config)
