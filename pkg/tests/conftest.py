import numpy as np
import pytest

from symmeq.eqnn import NetConfig
from symmeq.symmetry import build_toy_profile


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def toy():
    return build_toy_profile()


@pytest.fixture(scope="session")
def small_net():
    """Narrow networks so finite differences and training stay quick."""
    return NetConfig(actor_widths=(8, 8), critic_widths=(8, 8), encoder_widths=(8, 32), history=2)


def directional_fd(loss_fn, params, grads, rng, directions=2, epsilon=1e-6):
    """Worst relative error of <grad, v> against central differences along random v."""
    worst = 0.0
    base = [p.data.copy() for p in params]
    for _ in range(directions):
        vs = [rng.standard_normal(p.data.shape) for p in params]
        analytic = sum(float(np.sum(grads[p] * v)) for p, v in zip(params, vs) if p in grads)
        vals = []
        for s in (1.0, -1.0):
            for p, b, v in zip(params, base, vs):
                p.data = b + s * epsilon * v
            vals.append(loss_fn())
        for p, b in zip(params, base):
            p.data = b.copy()
        central = (vals[0] - vals[1]) / (2 * epsilon)
        worst = max(worst, abs(analytic - central) / max(1.0, abs(central)))
    return worst


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE = {}


def record_criterion(number, passed, detail, seconds):
    ACCEPTANCE[number] = f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}  ({seconds:.1f}s)"


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
