import numpy as np
import pytest

from cmbnet import oracle


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def check_grads(fn, arrays, step=1e-6, tol=1e-4, max_coords=None, rng=None):
    """Compare autodiff gradients of scalar ``fn(*tensors)`` with central differences.

    Returns the worst relative error over the probed coordinates.
    """
    from cmbnet.tensor import Tensor

    tensors = [Tensor(a, requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    raw = [t.data for t in tensors]

    def f():
        return fn(*[Tensor(a) for a in raw]).item()

    coords = [(p, i) for p, a in enumerate(raw) for i in range(a.size)]
    if max_coords is not None and len(coords) > max_coords:
        rng = rng if rng is not None else np.random.default_rng(0)
        coords = [coords[j] for j in rng.choice(len(coords), max_coords, replace=False)]
    numeric = oracle.fd_gradient(f, raw, step, coords)
    worst = max(oracle.rel_error(analytic[p].reshape(-1)[i], g) for (p, i), g in zip(coords, numeric))
    assert worst < tol, f"gradient mismatch: worst relative error {worst:.3e}"
    return worst


# -- acceptance reporting ---------------------------------------------------------
CRITERIA: dict[int, str] = {}


def record_criterion(number: int, passed: bool, text: str) -> None:
    """Store the one-line verdict for an acceptance criterion; printed in the terminal summary."""
    CRITERIA[number] = f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {text}"


def pytest_terminal_summary(terminalreporter):
    if not CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(CRITERIA):
        for line in CRITERIA[n].splitlines():
            terminalreporter.write_line(line)
