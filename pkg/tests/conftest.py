import numpy as np
import pytest

from costtrack import tensor as T


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of scalar f with respect to every entry of x (modified in place, then restored)."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f()
        x[i] = old - h
        fm = f()
        x[i] = old
        g[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, n) -> float:
    a, n = np.asarray(a), np.asarray(n)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), 1e-8))


def grad_check(build, params, h: float = 1e-5) -> float:
    """Worst relative error between tape gradients and central differences.

    ``build`` maps the parameter tensors to a scalar Tensor; ``params`` are leaf
    Tensors with requires_grad=True.
    """
    for p in params:
        p.zero_grad()
    loss = build(*params)
    T.backward(loss)
    worst = 0.0
    for p in params:
        def f():
            with T.no_grad():
                return float(build(*params).data)
        n = numeric_grad(f, p.data, h)
        worst = max(worst, rel_error(p.grad, n))
    return worst


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# (number, title, passed, detail) rows appended by the acceptance suite
ACCEPTANCE: list = []


def record_criterion(number: int, title: str, passed: bool, detail: str) -> None:
    ACCEPTANCE.append((number, title, bool(passed), detail))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, passed, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if passed else 'FAIL'}  {title}: {detail}")
