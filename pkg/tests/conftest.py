import time
from dataclasses import dataclass, field

import pytest

from snfsr.degradation import make_triple, sample_spec
from snfsr.substrate import Rng
from snfsr.trainer import FixedTriples, TrainConfig, TrainState, init_state, synthetic_images, train

# desk-scale overfit: 4 images whose 64x64 HR extent is the whole patch
OVERFIT_CONFIG = TrainConfig(T=100, lr_patch=16, scale_r=4, batch_size=2, steps=2000, learning_rate=1e-4,
                             base_channels=32, seed=0, log_every=0)

_RESULTS: list[tuple[str, bool, str]] = []


@dataclass
class OverfitRun:
    state: TrainState
    triples: list
    history: list[dict] = field(default_factory=list)
    seconds: float = 0.0


@pytest.fixture(scope="session")
def overfit_run() -> OverfitRun:
    imgs = synthetic_images(4, 64, seed=123)
    rng = Rng(7)
    triples = [make_triple(im, sample_spec(rng, "isotropic_noisefree", 4), 16, rng) for im in imgs]
    state = init_state(OVERFIT_CONFIG)
    t0 = time.perf_counter()
    hist = train(state, FixedTriples(triples))
    return OverfitRun(state, triples, hist, time.perf_counter() - t0)


@pytest.fixture
def report():
    """Record one PASS/FAIL line for the acceptance summary."""

    def _rec(name: str, ok: bool, detail: str) -> bool:
        line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        _RESULTS.append((name, ok, detail))
        return ok

    return _rec


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name, ok, detail in _RESULTS:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
