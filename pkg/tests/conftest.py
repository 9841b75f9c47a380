import numpy as np
import pytest

from equiavg.fields import GridSpec, Window, make_fieldset, make_schema


@pytest.fixture
def grid4():
    return GridSpec(4, 4)


@pytest.fixture
def mixed_schema():
    return make_schema(("c", "scalar"), ("v", "vector"), ("D", "tensor"))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_fieldset(grid, schema, rng, time_index=0, dtype=np.float64):
    total = sum(g.components for g in schema)
    data = rng.standard_normal((total, grid.ny, grid.nx))
    return make_fieldset(grid, schema, data, time_index=time_index, dtype=dtype)


def random_window(grid, schema, rng, k=2, t0=0, dtype=np.float64):
    return Window(tuple(
        random_fieldset(grid, schema, rng, time_index=t0 + i, dtype=dtype)
        for i in range(k)
    ))
