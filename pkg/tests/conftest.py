import numpy as np
import pytest

from mcc import tensor as T


def numeric_grad(fn, arrays, h=1e-5):
    """Central differences of scalar ``fn(*arrays)`` w.r.t. every array."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + h
            up = fn(*arrays)
            a[i] = old - h
            down = fn(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * h)
        grads.append(g)
    return grads


def rel_err(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    den = np.linalg.norm(a) + np.linalg.norm(b)
    return 0.0 if den == 0 else float(np.linalg.norm(a - b) / den)


def gradcheck(build, arrays, h=1e-5):
    """Largest relative error between reverse-mode and finite-difference gradients.

    ``build(*tensors)`` must return a scalar Tensor.
    """
    ts = [T.Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = build(*ts)
    T.backward(out)
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]

    def f(*arrs):
        with T.no_grad():
            return build(*[T.Tensor(x) for x in arrs]).item()

    numeric = numeric_grad(f, [a.copy() for a in arrays], h)
    return max(rel_err(x, y) for x, y in zip(analytic, numeric))


def store_gradcheck(store, loss_fn, h=1e-5, max_per_param=None, rng=None):
    """Compare every parameter gradient of ``store`` with finite differences of ``loss_fn()``."""
    store.zero_grad()
    loss = loss_fn()
    T.backward(loss, store)
    worst = 0.0
    for name in store.names():
        p = store[name]
        analytic = p.grad.copy()
        flat = p.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_per_param is not None and flat.size > max_per_param:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, max_per_param, replace=False)
        num = np.zeros(len(idx))
        with T.no_grad():
            for j, i in enumerate(idx):
                old = flat[i]
                flat[i] = old + h
                up = loss_fn().item()
                flat[i] = old - h
                down = loss_fn().item()
                flat[i] = old
                num[j] = (up - down) / (2 * h)
        worst = max(worst, rel_err(analytic.reshape(-1)[idx], num))
    return worst


@pytest.fixture
def np_rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report():
    """Record one pass/fail line for the acceptance summary."""

    def _report(criterion: int, passed: bool, detail: str) -> None:
        line = f"criterion {criterion}: {'PASS' if passed else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
