import json

import numpy as np
import pytest

from ocor.model import ModelConfig, init_params
from ocor.synthetic import synthetic_corpus

_ACCEPTANCE: list[tuple[int, str, str]] = []


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(number, text): exit criterion")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        number, text = marker.args
        _ACCEPTANCE.append((number, "PASS" if report.passed else "FAIL", text))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number, status, text in sorted(_ACCEPTANCE):
        terminalreporter.write_line(f"criterion {number}: {status}  {text}")


@pytest.fixture
def tiny_config():
    return ModelConfig(N=2, d=8, H=2, char_len=4, d_conv_first=12, mlp_hidden=10, dropout_rate=0.0)


@pytest.fixture
def tiny_params(tiny_config):
    return init_params(tiny_config, seed=3)


@pytest.fixture
def write_corpus(tmp_path):
    def write(pairs, name="corpus.jsonl"):
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as fh:
            for p in pairs:
                fh.write(json.dumps({"id": p.id, "question": p.question, "code": p.code}) + "\n")
        return path

    return write


@pytest.fixture
def toy_pairs():
    return synthetic_corpus(12, seed=0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
