import math

import numpy as np
import pytest

from utils.distributions import (
    LossModel,
    ModeSpectrum,
    equal_mode_fidelity_ceiling,
    geometric_pmf,
    lossy_thermal_vacuum_prob,
    mu_from_schmidt_number,
    phase_type_pmf,
)
from utils.errors import TruncationError, UndefinedFidelityError
from utils.herald import (
    fidelity_photon_number,
    fidelity_single_mode,
    herald_probability,
    herald_report,
    herald_statistics,
    joint_lossy_pmf,
    mean_detected_photons,
    multimode_joint_pmf,
)

LOSSLESS = LossModel()


def single_mode(gain):
    return ModeSpectrum.from_gain(gain, mu=0.0, k_max=1)


def test_lossless_joint_table_is_diagonal():
    x = math.tanh(0.8) ** 2
    joint = joint_lossy_pmf(math.tanh(0.8), LOSSLESS)
    assert joint.tail_mass < 1e-12
    np.testing.assert_allclose(np.diag(joint.table), (1 - x) * x ** np.arange(joint.n_trunc + 1), rtol=1e-12)
    assert np.max(np.abs(joint.table - np.diag(np.diag(joint.table)))) < 1e-15


def test_joint_marginals_are_lossy_thermal():
    loss = LossModel(eta_signal=0.6, eta_idler=0.3)
    tanh_param = math.tanh(1.1)
    joint = joint_lossy_pmf(tanh_param, loss)
    q = 1.0 - tanh_param**2
    for marginal, eta in ((joint.signal_marginal(), 0.6), (joint.idler_marginal(), 0.3)):
        expected = geometric_pmf(lossy_thermal_vacuum_prob(q, eta), joint.n_trunc)
        np.testing.assert_allclose(marginal, expected, rtol=0, atol=1e-12)


def test_short_joint_truncation_reports_suggestion():
    with pytest.raises(TruncationError) as info:
        joint_lossy_pmf(math.tanh(1.5), LOSSLESS, n_trunc=5)
    assert info.value.suggested_n_trunc > 5
    assert "suggested_n_trunc" in info.value.to_dict()


def test_invalid_tanh_parameter():
    with pytest.raises(ValueError):
        joint_lossy_pmf(1.0, LOSSLESS)


def test_single_mode_heralding_is_geometric_in_the_lossy_vacuum():
    spec = single_mode(0.9)
    loss = LossModel(eta_idler=0.7)
    q_lossy = lossy_thermal_vacuum_prob(spec.vacuum_probs[0], 0.7)
    for n in range(6):
        assert herald_probability(spec, loss, n) == pytest.approx(q_lossy * (1 - q_lossy) ** n, rel=1e-12)


def test_multimode_heralding_matches_joint_table_marginal():
    spec = ModeSpectrum.from_gain(0.5, mu=mu_from_schmidt_number(1.61), k_max=35)
    loss = LossModel(eta_signal=0.64, eta_idler=0.59)
    joint = multimode_joint_pmf(spec, loss, n_trunc=60)
    stats_ = herald_statistics(spec, loss, 8)
    np.testing.assert_allclose(joint.sum(axis=0)[:9], stats_.herald_prob, rtol=0, atol=1e-10)


@pytest.mark.parametrize("gain", np.round(np.arange(0.1, 2.01, 0.1), 2))
def test_lossless_single_mode_fidelity_is_unity(gain):
    stats_ = herald_statistics(single_mode(gain), LOSSLESS, 6)
    np.testing.assert_allclose(stats_.fidelity_single_mode[1:], 1.0, rtol=0, atol=1e-12)
    np.testing.assert_allclose(stats_.fidelity_photon_number[1:], 1.0, rtol=0, atol=1e-12)


@pytest.mark.parametrize("n_modes", [2, 3])
@pytest.mark.parametrize("n", [1, 2, 3])
def test_equal_mode_fidelity_reaches_ceiling(n_modes, n):
    spec = ModeSpectrum.equal_modes(1e-3, n_modes)
    assert fidelity_single_mode(spec, LOSSLESS, n) == pytest.approx(
        equal_mode_fidelity_ceiling(n_modes, n), abs=1e-4
    )


def test_single_mode_fidelity_with_idler_loss_has_closed_form():
    gain, eta, n = 0.7, 0.8, 3
    x = math.tanh(gain) ** 2
    expected = (1 - (1 - eta) * x) ** (n + 1)
    assert fidelity_single_mode(single_mode(gain), LossModel(eta_idler=eta), n) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("mu", [0.0, mu_from_schmidt_number(1.61)])
def test_heralding_ignores_signal_loss(mu):
    spec = ModeSpectrum.from_gain(0.7, mu=mu, k_max=35 if mu else 1)
    reference = herald_statistics(spec, LossModel(eta_signal=1.0, eta_idler=0.59), 6).herald_prob
    for eta_signal in (0.5, 0.1):
        lossy = herald_statistics(spec, LossModel(eta_signal=eta_signal, eta_idler=0.59), 6).herald_prob
        np.testing.assert_allclose(lossy, reference, rtol=1e-14, atol=0.0)
        assert herald_probability(spec, LossModel(eta_signal=eta_signal, eta_idler=0.59), 3) == pytest.approx(
            reference[3], rel=1e-14
        )


@pytest.mark.parametrize("mu", [0.0, mu_from_schmidt_number(1.61)])
def test_single_mode_fidelity_degrades_with_gain_and_idler_loss(mu):
    gains = np.linspace(0.1, 2.0, 60)
    etas = (1.0, 0.9, 0.5)
    # fidelity[eta, gain, n] for n = 1..3 with a lossless signal arm
    fidelity = np.array(
        [
            [
                herald_statistics(ModeSpectrum.from_gain(g, mu=mu, k_max=35 if mu else 1), LossModel(eta_idler=eta), 3)
                .fidelity_single_mode[1:]
                for g in gains
            ]
            for eta in etas
        ]
    )
    assert np.all(np.isfinite(fidelity))
    assert np.all(np.diff(fidelity, axis=1) <= 1e-12)
    assert np.all(np.diff(fidelity, axis=0) <= 1e-12)


def test_photon_number_fidelity_bounds_single_mode_fidelity():
    spec = ModeSpectrum.from_gain(0.8, mu=0.5, k_max=20)
    loss = LossModel(eta_signal=0.9, eta_idler=0.7)
    stats_ = herald_statistics(spec, loss, 5)
    assert np.all(stats_.fidelity_photon_number >= stats_.fidelity_single_mode - 1e-15)
    assert np.all((stats_.fidelity_single_mode >= 0) & (stats_.fidelity_photon_number <= 1))


def test_fidelity_decreases_with_more_modes():
    values = [
        fidelity_single_mode(ModeSpectrum.from_gain(0.6, mu=mu_from_schmidt_number(k), k_max=35), LOSSLESS, 2)
        for k in (1.0, 1.5, 2.0)
    ]
    assert values[0] == pytest.approx(1.0)
    assert values[0] > values[1] > values[2]


def test_dark_signal_arm_gives_zero_fidelity():
    spec = single_mode(0.8)
    stats_ = herald_statistics(spec, LossModel(eta_signal=0.0, eta_idler=0.9), 3)
    np.testing.assert_allclose(stats_.fidelity_photon_number[1:], 0.0, atol=1e-15)


def test_dark_idler_arm_heralds_only_vacuum():
    spec = ModeSpectrum.from_gain(0.8, mu=0.3, k_max=10)
    stats_ = herald_statistics(spec, LossModel(eta_signal=1.0, eta_idler=0.0), 3)
    np.testing.assert_allclose(stats_.herald_prob, [1, 0, 0, 0], atol=1e-15)
    assert np.all(np.isnan(stats_.fidelity_single_mode[1:]))


def test_fidelity_undefined_without_herald_events():
    with pytest.raises(UndefinedFidelityError):
        fidelity_photon_number(single_mode(0.0), LOSSLESS, 1)


def test_zero_gain_heralds_vacuum():
    stats_ = herald_statistics(single_mode(0.0), LOSSLESS, 3)
    np.testing.assert_allclose(stats_.herald_prob, [1, 0, 0, 0])
    assert stats_.fidelity_single_mode[0] == pytest.approx(1.0)


def test_statistics_agree_with_single_target_functions():
    spec = ModeSpectrum.from_gain(1.0, mu=0.4, k_max=25)
    loss = LossModel(eta_signal=0.8, eta_idler=0.6)
    stats_ = herald_statistics(spec, loss, 4)
    assert stats_.n_max == 4
    assert herald_probability(spec, loss, 4) == pytest.approx(stats_.herald_prob[4], rel=1e-12)
    assert fidelity_single_mode(spec, loss, 2) == pytest.approx(stats_.fidelity_single_mode[2], rel=1e-12)


def test_herald_probability_matches_phase_type_of_lossy_modes():
    spec = ModeSpectrum.from_gain(1.3, mu=0.6, k_max=35)
    loss = LossModel(eta_idler=0.5)
    lossy = lossy_thermal_vacuum_prob(spec.vacuum_probs, 0.5)
    expected = phase_type_pmf(lossy, n_max=5).probs[5]
    assert herald_probability(spec, loss, 5) == pytest.approx(expected, rel=1e-10)


def test_mean_detected_photons():
    spec = single_mode(0.9)
    assert mean_detected_photons(spec, 0.5) == pytest.approx(0.5 * math.sinh(0.9) ** 2)
    with pytest.raises(ValueError):
        mean_detected_photons(spec, 1.5)


def test_herald_report():
    report = herald_report(single_mode(0.9), LossModel(eta_idler=0.9), 2)
    payload = report.to_dict()
    assert payload["target_n"] == 2
    assert 0.0 < payload["herald_prob"] < 1.0
    assert payload["fidelity_photon_number"] >= payload["fidelity_single_mode"]
    assert payload["mean_signal_detected"] > payload["mean_idler_detected"]
