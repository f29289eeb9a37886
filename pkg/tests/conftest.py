import numpy as np
import pytest

from braincast.model import ModelConfig, init_params
from braincast.numerics import Rng

TINY = dict(N=4, L=16, T=4, D=8, G=1, heads=2, ffn_hidden=8, decomposition_kernel=3)


@pytest.fixture
def tiny_cfg():
    return ModelConfig(**TINY)


@pytest.fixture
def tiny_params(tiny_cfg):
    params = init_params(tiny_cfg, Rng(11))
    # non-zero biases/gains so every parameter influences the output
    g = np.random.default_rng(5)
    for k, v in params.items():
        if k.endswith("bias") or k.endswith("gain"):
            noise = 0.1 * g.standard_normal(v.shape)
            if np.iscomplexobj(v):
                noise = noise + 0.1j * g.standard_normal(v.shape)
            params[k] = v + noise
    return params


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    from helpers import ACCEPTANCE

    ran = any("test_acceptance" in r.nodeid for key in ("passed", "failed", "error")
              for r in terminalreporter.stats.get(key, []) if hasattr(r, "nodeid"))
    if not ran:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(ACCEPTANCE.get(n, f"criterion {n:>2}: ----  no verdict (not selected, or errored before reaching its check)"))
