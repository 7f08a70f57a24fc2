"""Shared fixtures: trained desk-scale networks cached across sessions."""

import hashlib
import json
from pathlib import Path

import pytest

import fadecast
from fadecast.predictor import PredictorNet, TrainingConfig, TrainingReport, train

SOURCES = ("nn.py", "predictor.py", "fading.py")
RESULTS: dict[int, tuple[bool, str]] = {}


def _cache_key(cfg: TrainingConfig) -> str:
    h = hashlib.sha256(json.dumps(cfg.to_dict(), sort_keys=True).encode())
    root = Path(fadecast.__file__).parent
    for name in SOURCES:
        h.update((root / name).read_bytes())
    return h.hexdigest()[:16]


def trained(request, cfg: TrainingConfig):
    """Train ``cfg`` once; later sessions reuse the stored model and report
    until the config or the training sources change."""
    folder = Path(request.config.cache.mkdir("fadecast-nets"))
    key = _cache_key(cfg)
    model, meta = folder / f"{key}.fcp", folder / f"{key}.json"
    if model.exists() and meta.exists():
        data = json.loads(meta.read_text())
        return PredictorNet.load(model), TrainingReport(**data)
    net, report = train(cfg)
    net.save(model)
    meta.write_text(json.dumps(report.__dict__))
    return net, report


@pytest.fixture(scope="session")
def desk_config():
    return TrainingConfig.desk()


@pytest.fixture(scope="session")
def desk_run(request, desk_config):
    return trained(request, desk_config)


@pytest.fixture(scope="session")
def desk_net(desk_run):
    return desk_run[0]


@pytest.fixture
def record():
    """Store one pass/fail line per acceptance criterion."""

    def _record(number: int, passed: bool, detail: str) -> bool:
        RESULTS[number] = (bool(passed), detail)
        return passed

    return _record


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(RESULTS):
        passed, detail = RESULTS[number]
        terminalreporter.write_line(f"criterion {number:2d}: {'PASS' if passed else 'FAIL'}  {detail}")
