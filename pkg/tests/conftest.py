import mlflow
import mpmath
import pytest

import quasitrace


@pytest.fixture(autouse=True)
def numeric_context():
    mlflow.tracing.disable()
    quasitrace.VERBOSE = False
    with mpmath.workdps(30):
        yield


@pytest.fixture
def bindings():
    return quasitrace.random_bindings(4, seed=3)
