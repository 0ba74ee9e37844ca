import numpy as np
import pytest

from sardespeckle.losses import LOSSES
from sardespeckle.nn import NetworkConfig, forward, backward, init_params

# relative errors are taken against max(|analytic|, |numeric|, GRAD_FLOOR)
GRAD_FLOOR = 1e-6


class KinkCrossed(Exception):
    """A finite-difference step changed the activation pattern."""


def activation_pattern(cache):
    pattern = []
    for step in cache.steps:
        if step[0] == "act":
            pattern.append(step[1] > 0)
        elif step[0] == "pool":
            pattern.append(step[1])
    return pattern


def same_pattern(a, b):
    return all(np.array_equal(x, y) for x, y in zip(a, b))


def tiny_problem(rng, depth=1, channels=(4,), size=8):
    cfg = NetworkConfig(depth=depth, channels=channels)
    params = init_params(cfg, rng, dtype=np.float64, zero_head=False)
    for name, t in params.tensors.items():
        if name.endswith(".bias"):
            t[...] = 0.1 * rng.standard_normal(t.shape)
    x = rng.standard_normal((1, 1, size, size))
    y2 = x + 0.3 * rng.standard_normal(x.shape)
    return params, x, y2


def network_grad_error(params, x, y2, loss="likelihood", looks=1.0, h=1e-4):
    """Max relative error between backprop and central differences.

    Raises KinkCrossed when any perturbed evaluation flips a rectifier sign or
    a max-pool winner, since the difference quotient is then meaningless.
    """
    fn = LOSSES[loss]
    out, cache = forward(params, x)
    base = activation_pattern(cache)
    lv, g = fn(out, y2, looks)
    analytic = backward(params, cache, g)

    def total():
        o, c = forward(params, x)
        if not same_pattern(base, activation_pattern(c)):
            raise KinkCrossed
        return fn(o, y2, looks)[0].total

    worst = 0.0
    for name, t in params.tensors.items():
        num = np.empty_like(t)
        flat = t.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + h
            lp = total()
            flat[i] = old - h
            lm = total()
            flat[i] = old
            num.reshape(-1)[i] = (lp - lm) / (2 * h)
        a = analytic[name]
        rel = np.abs(a - num) / np.maximum(np.maximum(np.abs(a), np.abs(num)), GRAD_FLOOR)
        worst = max(worst, float(rel.max()))
    return worst


def checked_grad_error(seed, loss="likelihood", attempts=25):
    """Draw tiny problems from ``seed`` until one has no kink within reach."""
    rng = np.random.default_rng(seed)
    for _ in range(attempts):
        params, x, y2 = tiny_problem(rng)
        try:
            return network_grad_error(params, x, y2, loss)
        except KinkCrossed:
            continue
    raise RuntimeError(f"seed {seed}: every draw crossed a kink")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def phase_a_report():
    """Likelihood phase A on small textured scenes, shared by pipeline tests.

    The likelihood loss needs on the order of a thousand Adam steps before it
    beats the identity, so the fixture trains on 32x32 patches to keep it cheap.
    """
    from sardespeckle.data import textured_scene
    from sardespeckle.pipeline import PhaseConfig, train

    clean = [textured_scene(96, 96, 100 + i) for i in range(4)]
    cfg = PhaseConfig(phase="A", epochs=40, patch_size=32, stride=16, seed=0, lr_milestones=((30, 0.1),))
    return train(cfg, None, clean)


_VERDICTS = pytest.StashKey[list]()


@pytest.fixture
def verdict(request):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
        print(line)
        request.config.stash.setdefault(_VERDICTS, []).append((number, line))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_VERDICTS, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
