from __future__ import annotations

import numpy as np
import pytest

from popmiss.identification import UnitNuisances
from popmiss.model import Column, CovariateSchema, Dataset

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)


def make_schema(K: int = 2, x_levels=(3,), numeric_v: bool = True) -> CovariateSchema:
    v = [Column("grp", "categorical", ("a", "b"))]
    if numeric_v:
        v.append(Column("z", "numeric"))
    x = [Column(f"x{j}", "categorical", tuple(str(i) for i in range(n))) for j, n in enumerate(x_levels)]
    return CovariateSchema(tuple(f"list{k}" for k in range(K)), tuple(v), tuple(x))


def random_dataset(rng: np.random.Generator, n: int, schema: CovariateSchema, p_missing: float = 0.3) -> Dataset:
    P = schema.n_profiles
    profile = rng.integers(0, P, size=n)
    cols = []
    for c in schema.v_columns:
        cols.append(rng.integers(0, len(c.levels), size=n) if c.is_categorical else rng.normal(size=n))
    v = np.column_stack(cols) if cols else np.empty((n, 0))
    x = np.column_stack([rng.integers(0, len(c.levels), size=n) for c in schema.x_columns])
    miss = rng.random(n) < p_missing
    x[miss] = -1
    return Dataset(schema, profile, v, x, ~miss)


def random_nuisances(rng: np.random.Generator, n: int, P: int, L: int, pi_low: float = 0.2) -> UnitNuisances:
    q_v = rng.dirichlet(np.ones(P), size=n) * 0.9 + 0.1 / P
    lam = rng.dirichlet(np.ones(L), size=(n, P)) * 0.9 + 0.1 / L
    pi = rng.uniform(pi_low, 1.0, size=(n, P))
    return UnitNuisances.from_components(q_v, lam, pi)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def schema2():
    return make_schema(2, (3,))


@pytest.fixture
def schema3():
    return make_schema(3, (2, 3))
