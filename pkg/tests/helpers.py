"""Oracle helpers shared across test modules."""

import numpy as np

from winseg.kernel import Matrix

# One line per acceptance check, echoed in the terminal summary by conftest.
ACCEPTANCE_LINES: list = []


def record_acceptance(name: str, ok: bool, detail: str):
    line = f"[{name}] {'PASS' if ok else 'FAIL'}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def fd_grad(scalar_fn, m: Matrix, step: float = 1e-6) -> np.ndarray:
    """Central differences of scalar_fn() w.r.t. every entry of m."""
    g = np.zeros_like(m.data)
    flat = m.data.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + step
        up = scalar_fn()
        flat[i] = keep - step
        down = scalar_fn()
        flat[i] = keep
        gf[i] = (up - down) / (2.0 * step)
    return g


def assert_grads_close(analytic: np.ndarray, fd: np.ndarray, tol: float = 1e-6):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(fd)), 1.0)
    assert np.max(np.abs(analytic - fd) / denom) < tol
