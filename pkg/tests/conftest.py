import math

import numpy as np
import pytest

from srdlab.drift import DriftSpec
from srdlab.integrator import Model, SchemeSpec
from srdlab.noise import NoiseSpec
from srdlab.spectral import GridSpec, SpectralField

N_MODES = 64
BENCH_SEED = 20240611
LAM_AC = math.pi**2 - 1


def make_model(drift=None, theta=0.0, n=N_MODES, seed=BENCH_SEED, p=2.0, amplitude=1.0):
    drift = drift if drift is not None else DriftSpec.allen_cahn()
    return Model(GridSpec(n), drift, NoiseSpec(theta, n, seed=seed, amplitude=amplitude), p)


def mode_field(coeffs: dict, n=N_MODES) -> SpectralField:
    c = np.zeros(n)
    for k, v in coeffs.items():
        c[k - 1] = v
    return SpectralField(c)


@pytest.fixture(scope="session")
def ac_model():
    return make_model()


@pytest.fixture(scope="session")
def ou_model():
    return make_model(DriftSpec.zero())


@pytest.fixture(scope="session")
def bench_scheme():
    return SchemeSpec(1e-4)


@pytest.fixture(scope="session")
def coarse_scheme():
    return SchemeSpec(1e-3)


def shrunken_config(name: str) -> dict:
    """A bundled config with small path counts and a coarse step, for fast end-to-end runs."""
    from srdlab.config import load_raw

    c = load_raw(name)
    c["scheme"]["dt"] = 1e-3
    c["block_size"] = 20
    e = c["experiments"]
    e["simulate"].update(n_paths=40)
    e["couple"].update(n_paths=40, T=0.2)
    e["harnack"].update(n_paths=40, n_paths_coupling=40, T=0.2)
    if "gradient" in e["harnack"]:
        e["harnack"]["gradient"]["n_paths"] = 40
    e["ergodic"].update(horizon=2.0, burn_in=0.0, horizons=[1.0, 2.0], tv_paths=20)
    if e["ergodic"].get("tv_times"):
        e["ergodic"]["tv_times"] = [0.1, 0.2]
    e["noise-diag"].update(n_paths=2000)
    e["validate-drift"] = {"grid_radius": 5.0, "grid_step": 0.5}
    return c


# ----------------------------------------------------------------------
# one summary line per acceptance criterion

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    m = item.get_closest_marker("criterion")
    if m is None or rep.when == "teardown":
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(v for k, v in item.user_properties if k == "detail")
    status = {"passed": "PASS", "failed": "FAIL", "skipped": "SKIP"}[rep.outcome]
    _CRITERIA[m.args[0]] = (m.args[1], status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_CRITERIA):
        title, status, detail = _CRITERIA[n]
        line = f"criterion {n:2d} {status}  {title}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
