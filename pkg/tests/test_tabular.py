import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from kidqn.tabular import TinyMDP, harmonic_step, tabular_ki_q_learning, tabular_q_learning, value_iteration

CHAIN = TinyMDP.chain(3, gamma=0.95)
Q_STAR = np.array([[0.9025, 0.857375], [0.95, 0.9025], [1.0, 0.95], [0.0, 0.0]])


def test_single_step_chain():
    q = value_iteration(TinyMDP.chain(1, gamma=0.95))
    assert q[0] == pytest.approx([1.0, 0.95], abs=1e-12)


def test_three_state_chain():
    assert np.allclose(value_iteration(CHAIN), Q_STAR, atol=1e-12)


def test_zero_discount():
    q = value_iteration(TinyMDP.chain(3, gamma=0.0))
    assert np.array_equal(q, CHAIN.reward.astype(float))


@pytest.mark.parametrize("gamma", [0.0, 0.5, 0.95])
def test_contraction(gamma):
    hist = []
    value_iteration(TinyMDP.chain(5, gamma=gamma), history=hist)
    assert all(b <= a + 1e-15 for a, b in zip(hist, hist[1:]))


def test_mdp_validation():
    with pytest.raises(ValueError):
        TinyMDP(np.array([[0, 2]]), np.zeros((1, 2), dtype=int), np.array([False]))
    with pytest.raises(ValueError):
        TinyMDP(np.array([[0, 1], [0, 1]]), np.zeros((2, 2), dtype=int), np.array([False, True]))


def test_harmonic_step():
    assert harmonic_step(1) == 1.0
    assert harmonic_step(3, c=1.0) == pytest.approx(1.0 / 3.0)


@pytest.mark.parametrize("seed", range(3))
def test_q_learning_converges(seed):
    q = tabular_q_learning(CHAIN, 10_000, seed=seed)
    assert np.abs(q - Q_STAR).max() <= 1e-3


def test_ki_drives_masked_entries_to_zero():
    masks = np.ones((4, 2), dtype=bool)
    masks[0, 1] = masks[1, 1] = False
    q = tabular_ki_q_learning(CHAIN, masks, 10_000, seed=0, q_init=1.0)
    assert np.abs(q[~masks]).max() < 1e-3
    on = masks & ~CHAIN.terminal[:, None]
    assert np.abs(q[on] - Q_STAR[on]).max() <= 1e-3


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10**6), st.floats(-1.0, 1.0))
def test_full_mask_matches_vanilla(seed, q_init):
    ta, tb = [], []
    qa = tabular_q_learning(CHAIN, 300, seed=seed, q_init=q_init, trajectory=ta)
    qb = tabular_ki_q_learning(CHAIN, np.ones((4, 2), dtype=bool), 300, seed=seed, q_init=q_init, trajectory=tb)
    assert np.array_equal(qa, qb)
    assert all(np.array_equal(a, b) for a, b in zip(ta, tb))


def test_empty_mask_rejected():
    masks = np.ones((4, 2), dtype=bool)
    masks[1] = False
    with pytest.raises(ValueError):
        tabular_ki_q_learning(CHAIN, masks, 10)
    masks = np.ones((4, 2), dtype=bool)
    masks[3] = False  # terminal rows may be empty
    tabular_ki_q_learning(CHAIN, masks, 10)
