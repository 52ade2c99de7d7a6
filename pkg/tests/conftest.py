from dataclasses import asdict

import numpy as np
import pytest

from vrefkit.circuit import ModelFlags
from vrefkit.config import default_config


# (criterion, passed, detail) lines from test_acceptance, echoed at the end of the run
ACCEPTANCE: list = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num, ok, detail in sorted(ACCEPTANCE):
        terminalreporter.write_line(f"criterion {num:2d}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.fixture(scope="session")
def cfg():
    return default_config()


@pytest.fixture(scope="session")
def ideal_cfg(cfg):
    return cfg.with_flags(**asdict(ModelFlags.ideal()))


def random_config(base, seed):
    """Perturb thresholds, widths and temperature slopes of every device.

    Ranges are kept moderate so the topology stays in weak inversion with
    positive headroom at the default supply.
    """
    rng = np.random.default_rng(seed)

    def tweak(name, dev):
        return dev.with_(
            vth0=dev.vth0 + rng.uniform(-0.015, 0.015),
            w=dev.w * rng.uniform(0.8, 1.25),
            alpha=dev.alpha * rng.uniform(0.9, 1.1),
        )

    return base.map_devices(tweak)
