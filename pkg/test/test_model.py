import numpy as np
import pytest
from hypothesis import given, strategies as st

from irs_alloc.model import (
    Beamformer, ChannelSet, PhaseSelection, ScenarioConfig, condition, dbm_to_watts, matched_filter_power,
    phase_alphabet, reflection_vector, selections, sinr_per_user, verify_qos, watts_to_dbm,
)


def test_phase_alphabet_values():
    np.testing.assert_array_equal(phase_alphabet(4), np.array([1, 1j, -1, -1j]))
    np.testing.assert_array_equal(phase_alphabet(2), np.array([1, -1]))
    np.testing.assert_array_equal(phase_alphabet(1), np.array([1]))
    with pytest.raises(ValueError):
        phase_alphabet(0)


def test_reflection_vector_appends_direct_entry():
    v = reflection_vector(PhaseSelection((1, 0, 3), 4))
    np.testing.assert_array_equal(v, np.array([1j, 1, -1j, 1]))
    np.testing.assert_array_equal(reflection_vector(PhaseSelection((), 2)), np.array([1]))


def test_selection_matrix_layout():
    sel = PhaseSelection((1, 0), 2)
    np.testing.assert_array_equal(sel.B, np.array([[0, 1, 1], [1, 0, 0]]))
    assert PhaseSelection.from_matrix(sel.B).idx == (1, 0)
    assert PhaseSelection.from_matrix(sel.B[:, :2], fixed_column=False).idx == (1, 0)


def test_selection_rejects_bad_input():
    with pytest.raises(ValueError):
        PhaseSelection((2,), 2)
    with pytest.raises(ValueError):
        PhaseSelection.from_matrix(np.array([[0.5, 1.0], [0.5, 0.0]]))
    with pytest.raises(ValueError):
        PhaseSelection.from_matrix(np.array([[1.0, 0.0], [0.0, 1.0]]))


@given(bits=st.integers(1, 3), raw=st.lists(st.integers(0, 7), max_size=6))
def test_alphabet_nesting_is_bit_exact(bits, raw):
    L = 2 ** bits
    sel = PhaseSelection(tuple(r % L for r in raw), L)
    np.testing.assert_array_equal(reflection_vector(sel), reflection_vector(sel.refine()))


def test_selections_are_lexicographic():
    idx = [s.idx for s in selections(2, 2)]
    assert idx == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert sum(1 for _ in selections(3, 4)) == 64


def test_single_user_sinr_without_irs():
    cfg = ScenarioConfig(M=1, K=1, N=0, B_bits=1, gamma=1.0, sigma2=1.0)
    ch = ChannelSet(F=np.zeros((0, 1)), h=np.zeros((1, 0)), d=[[1.0]])
    sinr = sinr_per_user(Beamformer([[2.0]]), PhaseSelection((), 2), ch, cfg)
    np.testing.assert_allclose(sinr, [4.0])


def test_zero_beams_give_zero_sinr(unit_channels):
    cfg = ScenarioConfig(M=2, K=2, N=0, B_bits=1, gamma=1.0, sigma2=1.0)
    ch = unit_channels(2, 2, 0)
    sinr = sinr_per_user(Beamformer(np.zeros((2, 2))), PhaseSelection((), 2), ch, cfg)
    np.testing.assert_array_equal(sinr, [0.0, 0.0])
    assert not verify_qos(Beamformer(np.zeros((2, 2))), PhaseSelection((), 2), ch, cfg).ok


def test_sinr_matches_received_signal_model(unit_channels):
    M, K, N = 3, 2, 4
    ch = unit_channels(M, K, N, seed=5)
    cfg = ScenarioConfig(M=M, K=K, N=N, B_bits=2, gamma=1.0, sigma2=[0.5, 2.0])
    rng = np.random.default_rng(6)
    W = rng.standard_normal((M, K)) + 1j * rng.standard_normal((M, K))
    sel = PhaseSelection((0, 3, 1, 2), 4)
    v = reflection_vector(sel)
    expected = []
    for k in range(K):
        g = (np.conj(ch.h[k]) * v[:N]) @ ch.F + np.conj(ch.d[k])
        amp = np.abs(g @ W) ** 2
        expected.append(amp[k] / (amp.sum() - amp[k] + cfg.sigma2[k]))
    np.testing.assert_allclose(sinr_per_user(Beamformer(W), sel, ch, cfg), expected, rtol=1e-12)


def test_qos_slack_scales_with_power(unit_channels):
    ch = unit_channels(2, 1, 2, seed=3)
    cfg = ScenarioConfig(M=2, K=1, N=2, B_bits=1, gamma=1.0, sigma2=1.0)
    sel = PhaseSelection((1, 0), 2)
    g = ch.cascade(0).T @ reflection_vector(sel)
    W = Beamformer(g.conj()[:, None] / np.linalg.norm(g) ** 2)
    low = verify_qos(W, sel, ch, cfg)
    high = verify_qos(W.scaled(10.0), sel, ch, cfg)
    np.testing.assert_allclose((high.slack + 1.0) / (low.slack + 1.0), [100.0], rtol=1e-10)
    assert low.ok and high.ok


def test_matched_filter_power_meets_target_exactly(unit_channels):
    ch = unit_channels(3, 1, 2, seed=8)
    cfg = ScenarioConfig(M=3, K=1, N=2, B_bits=1, gamma=2.0, sigma2=0.5)
    sel = PhaseSelection((0, 1), 2)
    p = matched_filter_power(sel, ch, cfg)
    g = ch.cascade(0).T @ reflection_vector(sel)
    W = Beamformer(np.sqrt(p) * g.conj()[:, None] / np.linalg.norm(g))
    np.testing.assert_allclose(sinr_per_user(W, sel, ch, cfg), [2.0], rtol=1e-10)


def test_conditioning_preserves_sinr(small):
    cfg, ch = small
    ch_int, cfg_int, cond = condition(ch, cfg)
    np.testing.assert_array_equal(cfg_int.sigma2, np.ones(cfg.K))
    rng = np.random.default_rng(1)
    W_int = rng.standard_normal((cfg.M, cfg.K)) + 1j * rng.standard_normal((cfg.M, cfg.K))
    for sel in selections(cfg.N, cfg.L):
        internal = sinr_per_user(Beamformer(W_int), sel, ch_int, cfg_int)
        physical = sinr_per_user(cond.beamformer(W_int), sel, ch, cfg)
        np.testing.assert_allclose(internal, physical, rtol=1e-9)
    np.testing.assert_allclose(cond.to_watts(2.0), 2.0 * cond.power_scale)


def test_config_validation_and_units():
    with pytest.raises(ValueError):
        ScenarioConfig(M=2, K=2, N=2, B_bits=1, gamma=-1.0, sigma2=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(M=2, K=2, N=2, B_bits=0, gamma=1.0, sigma2=1.0)
    with pytest.raises(ValueError):
        ScenarioConfig(M=2, K=2, N=-1, B_bits=1, gamma=1.0, sigma2=1.0)
    cfg = ScenarioConfig.from_db(2, 2, 3, 2, 10.0, -90.0)
    np.testing.assert_allclose(cfg.gamma, [10.0, 10.0])
    np.testing.assert_allclose(cfg.sigma2, [1e-12, 1e-12])
    assert cfg.L == 4
    np.testing.assert_allclose(watts_to_dbm(1.0), 30.0)
    assert watts_to_dbm(0.0) == float('-inf')
    np.testing.assert_allclose(dbm_to_watts(30.0), 1.0)


def test_channel_set_checks_dimensions(unit_channels):
    ch = unit_channels(2, 2, 3)
    with pytest.raises(ValueError):
        ch.check(ScenarioConfig(M=2, K=2, N=2, B_bits=1, gamma=1.0, sigma2=1.0))
    direct = ch.without_irs()
    assert direct.N == 0
    np.testing.assert_array_equal(direct.d, ch.d)
