"""Shared fixtures.

Small datasets and a lightly trained classifier cover the fast unit tests;
the expensive pretrained/defended models used by the acceptance gate live in
test_acceptance.py behind a checkpoint cache keyed on the package source
hash, so repeated runs against unchanged code skip the training cost.
"""

import pytest

from gat.data.synth import SynthSpec, synth_dataset
from gat.models.classifier import Classifier
from gat.models.procedural import generator_family
from gat.training import TrainConfig, adversarial_train

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def criterion_report():
    """Record one PASS/FAIL line per criterion and assert on it."""

    def record(name, ok, detail):
        line = f"{name}: {'PASS' if ok else 'FAIL'} ({detail})"
        ACCEPTANCE_LINES.append(line)
        assert ok, line

    return record


@pytest.fixture(scope="session")
def gens():
    return generator_family(4)


@pytest.fixture(scope="session")
def tiny_train():
    return synth_dataset(SynthSpec(seed=0), 256)


@pytest.fixture(scope="session")
def tiny_test():
    return synth_dataset(SynthSpec(seed=1), 128)


@pytest.fixture(scope="session")
def quick_clf(tiny_train, tiny_test):
    """A few epochs of supervised training; enough signal for attack tests."""
    model = Classifier(seed=0)
    adversarial_train(model, tiny_train,
                      TrainConfig(epochs=4, batch_size=32, ratio="1:0", seed=0),
                      test_dataset=tiny_test)
    return model
