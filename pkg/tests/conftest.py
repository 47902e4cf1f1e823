import os

import pytest
import torch
from hypothesis import settings

settings.register_profile("vrpseg", deadline=None, max_examples=60, derandomize=True)
settings.load_profile("vrpseg")

from vrpseg.data import SynthConfig, fold_spec, synth_dataset  # noqa: E402


@pytest.fixture(autouse=True, scope="session")
def _isolated_cache(tmp_path_factory):
    os.environ["VRPSEG_CACHE"] = str(tmp_path_factory.mktemp("vrpseg-cache"))
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def small_manifest():
    return synth_dataset(SynthConfig(n_images=48), seed=3)


@pytest.fixture(scope="session")
def manifest():
    return synth_dataset(SynthConfig(), seed=0)


@pytest.fixture(scope="session")
def spec0():
    return fold_spec("synthetic", 0)


# acceptance summary: one line per criterion at the end of the run
_ACCEPTANCE = {}


def pytest_runtest_logreport(report):
    if "test_acceptance.py" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _ACCEPTANCE[report.nodeid] = (report.outcome, detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for nodeid, (outcome, detail) in sorted(_ACCEPTANCE.items()):
        name = nodeid.split("::")[-1]
        verdict = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{verdict}  {name}  {detail}")
