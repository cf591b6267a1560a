import numpy as np
import pytest


def central_difference(fn, x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central differences of scalar ``fn`` w.r.t. every entry of ``x`` (mutated and restored)."""
    g = np.empty_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = fn()
        flat[i] = old - h
        fm = fn()
        flat[i] = old
        gflat[i] = (fp - fm) / (2 * h)
    return g


def assert_rel_close(analytic, numeric, rel=1e-5, atol=1e-8):
    analytic, numeric = np.asarray(analytic), np.asarray(numeric)
    err = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = err > rel * scale + atol
    assert not bad.any(), f"max err {err.max():.3e} at {np.argwhere(bad)[:3].tolist()}"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
