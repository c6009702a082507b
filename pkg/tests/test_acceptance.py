"""Runs every acceptance criterion at its stated tolerance.

Each test prints one PASS/FAIL line (also repeated in the terminal summary).
Criteria 5-7 share one module-scoped set of desk-scale training runs and take
tens of minutes on one core; deselect them with ``-m "not slow"``.
"""

import pytest

from kidqn import acceptance as acc


def report(result, log, capsys):
    line = result.line()
    log.append(line)
    with capsys.disabled():
        print("\n" + line)
    assert result.passed, line


def test_criterion_1_gradient_check(criterion_log, capsys):
    res = acc.criterion_1_gradients()
    report(res, criterion_log, capsys)
    assert res.seconds < 60.0


def test_criterion_2_reduction(criterion_log, capsys):
    report(acc.criterion_2_reduction(), criterion_log, capsys)


def test_criterion_3_tabular(criterion_log, capsys):
    report(acc.criterion_3_tabular(), criterion_log, capsys)


def test_criterion_4_physics(criterion_log, capsys):
    res = acc.criterion_4_physics()
    report(res, criterion_log, capsys)
    assert res.seconds < 60.0


@pytest.fixture(scope="module")
def experiment():
    return acc.learning_experiment(log=None)


@pytest.mark.slow
def test_criterion_5_learning(experiment, criterion_log, capsys):
    report(acc.criterion_5_learning(experiment), criterion_log, capsys)


@pytest.mark.slow
def test_criterion_6_generalisation(experiment, criterion_log, capsys):
    report(acc.criterion_6_generalisation(experiment), criterion_log, capsys)


@pytest.mark.slow
def test_criterion_7_suppression(experiment, criterion_log, capsys):
    report(acc.criterion_7_suppression(experiment), criterion_log, capsys)


def test_criterion_8_determinism(criterion_log, capsys):
    report(acc.criterion_8_determinism(), criterion_log, capsys)
