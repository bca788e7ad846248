import numpy as np
import pytest

from vauth.decision import build_training_set, train_classifier
from vauth.signal_core import SampledSignal
from vauth.synth import synth_command_corpus, synth_phoneme_bank

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for line in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def verdict():
    def record(n: int, name: str, ok: bool, detail: str = ""):
        line = f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"
        print(line)
        ACCEPTANCE_LINES.append(line)
        return ok
    return record


def replicate(examples, k):
    """Same list build_training_set returns with ``minority_replication=k``."""
    return [e for e in examples for _ in range(k if e.label else 1)]


@pytest.fixture(scope="session")
def bank0_examples():
    bank = synth_phoneme_bank(0)
    return build_training_set([p.acc for p in bank], [p.mic for p in bank], 1)


@pytest.fixture(scope="session")
def model(bank0_examples):
    # trained once on bank seed 0; everything evaluated elsewhere uses other seeds
    return train_classifier(replicate(bank0_examples, 5))


@pytest.fixture(scope="session")
def bank1():
    return synth_phoneme_bank(1)


@pytest.fixture(scope="session")
def commands():
    return synth_command_corpus(0, 10)


@pytest.fixture(scope="session")
def impostor():
    return synth_command_corpus(1, 10)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def tone(freq, dur, rate=8000.0, amp=1.0):
    t = np.arange(int(round(dur * rate))) / rate
    return SampledSignal(amp * np.sin(2 * np.pi * freq * t), rate)


def f32(sig: SampledSignal) -> SampledSignal:
    """What a float32 wire or WAV round trip does to a signal."""
    return sig.with_samples(sig.samples.astype(np.float32).astype(np.float64))
