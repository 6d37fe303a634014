import numpy as np
import pytest

from qscnewton import CompositeTerm, compute_reference, generate_synthetic


@pytest.fixture(autouse=True)
def _isolated_cache(tmp_path, monkeypatch):
    monkeypatch.setenv("QSC_CACHE_DIR", str(tmp_path / "qsc_cache"))


@pytest.fixture(scope="session")
def logistic_ref():
    """The canonical logistic instance: n=20, m=200, seed=1."""
    return generate_synthetic("logistic", n=20, m=200, seed=1)


@pytest.fixture(scope="session")
def logistic_reference(logistic_ref):
    """High-accuracy solution of the canonical logistic instance."""
    return compute_reference(logistic_ref, CompositeTerm.zero(), np.zeros(20))


@pytest.fixture(scope="session")
def zoo():
    """One instance per family, sized for fast per-test sweeps."""
    return {
        "quadratic": generate_synthetic("quadratic", n=8, seed=3),
        "softmax": generate_synthetic("softmax", n=8, m=24, seed=5, smoothing=1.0),
        "logistic": generate_synthetic("logistic", n=8, m=40, seed=7),
        "exponential": generate_synthetic("exponential", n=8, m=40, seed=9),
        "matrix_scaling": generate_synthetic("matrix_scaling", n=5, seed=11),
        "matrix_balancing": generate_synthetic("matrix_balancing", n=5, seed=13),
    }
