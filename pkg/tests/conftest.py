import datetime as dt

import numpy as np
import pytest
import torch

from clvae.model import CLVAE, ModelConfig
from clvae.raster_io import SarTile

TINY = dict(latent_dim=4, bottleneck_units=4, convlstm_filters=4, residual_channels=[4, 8],
            extra_residual_blocks=0, patch_size=8, timesteps=2)


@pytest.fixture
def tiny_config():
    return ModelConfig(**TINY)


@pytest.fixture
def tiny_model(tiny_config):
    torch.manual_seed(0)
    return CLVAE(tiny_config).eval()


def random_tile(h, w, seed, day=1):
    rng = np.random.default_rng(seed)
    return SarTile(rng.random((h, w)), rng.random((h, w)),
                   acquisition_date=dt.date(2021, 1, day))


# -- acceptance summary -------------------------------------------------------------
# one line per criterion; a criterion passes when every test carrying its marker does

_CRITERIA: dict[int, dict] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or rep.when == "teardown":
        return
    number, title = marker.args
    entry = _CRITERIA.setdefault(number, {"title": title, "ok": True, "secs": 0.0})
    entry["secs"] += rep.duration
    if rep.failed or (rep.when == "call" and not rep.passed):
        entry["ok"] = False


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        e = _CRITERIA[number]
        status = "PASS" if e["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:2d}: {status}  {e['title']}  ({e['secs']:.1f} s)")
