import numpy as np
import pytest
from scipy import stats

from utils.tes_ingest import (
    GaussianComponent,
    MixtureFit,
    TesHistogram,
    allan_frame,
    allan_variance,
    assign_counts,
    fit_mixture,
    misassignment_probabilities,
)


def mixture_events(rng, components, size):
    weights = np.array([c.weight for c in components])
    labels = rng.choice(len(components), size=size, p=weights / weights.sum())
    centers = np.array([c.center for c in components])
    widths = np.array([c.width for c in components])
    return rng.normal(centers[labels], widths[labels])


# ---------------------------------------------------------------------------
# Histograms
# ---------------------------------------------------------------------------


@pytest.mark.parametrize(
    "edges, counts",
    [
        ([0, 1, 2], [1, 2, 3]),
        ([0, 2, 1], [1, 2]),
        ([0, 1, 2], [1, -2]),
        ([0, 1, 2], [1, 2.5]),
        ([0], []),
    ],
)
def test_histogram_validation(edges, counts):
    with pytest.raises(ValueError):
        TesHistogram.from_arrays(edges, counts)


def test_histogram_from_events():
    hist = TesHistogram.from_events([0.1, 0.2, 0.9, 1.5], bins=4, value_range=(0.0, 2.0))
    assert hist.counts.tolist() == [2, 1, 0, 1]
    assert hist.total == 4
    assert hist.occupied_bins == 3
    assert hist.range == (0.0, 2.0)
    np.testing.assert_allclose(hist.centers, [0.25, 0.75, 1.25, 1.75])


# ---------------------------------------------------------------------------
# Mixture fitting
# ---------------------------------------------------------------------------


def test_well_separated_peaks_are_recovered(rng):
    truth = [GaussianComponent(0.6, 0.0, 1.0), GaussianComponent(0.4, 10.0, 1.0)]
    hist = TesHistogram.from_events(mixture_events(rng, truth, 100_000), bins=200, value_range=(-5.0, 15.0))
    fit = fit_mixture(hist, 2)
    assert fit.n_peaks == 2
    for fitted, expected in zip(fit.components, truth):
        assert fitted.center == pytest.approx(expected.center, abs=0.1)
        assert fitted.width == pytest.approx(expected.width, abs=0.1)
        assert fitted.weight == pytest.approx(expected.weight, abs=0.01)
    assert fit.boundaries[1] == pytest.approx(5.0, abs=0.1)


def test_single_peak_fit(rng):
    hist = TesHistogram.from_events(rng.normal(3.0, 0.5, 20_000), bins=100, value_range=(0.0, 6.0))
    fit = fit_mixture(hist, 1)
    assert fit.components[0].center == pytest.approx(3.0, abs=0.02)
    assert fit.components[0].width == pytest.approx(0.5, abs=0.02)
    assert fit.acceptance_windows == [(0.0, 6.0)]


def test_more_components_fit_at_least_as_well(fixture_path):
    values = np.loadtxt(fixture_path("histogram.csv"), delimiter=",", comments="#", skiprows=2)
    step = values[1, 0] - values[0, 0]
    edges = np.append(values[:, 0] - step / 2, values[-1, 0] + step / 2)
    hist = TesHistogram.from_arrays(edges, values[:, 1])
    one, two = fit_mixture(hist, 1), fit_mixture(hist, 2)
    assert two.residual <= one.residual
    assert [c.center for c in two.components] == pytest.approx([0.0, 0.7], abs=0.02)


def test_truncated_histogram_keeps_weights_normalized(rng):
    truth = [GaussianComponent(0.5, 0.0, 1.0), GaussianComponent(0.5, 3.0, 1.0)]
    hist = TesHistogram.from_events(mixture_events(rng, truth, 50_000), bins=70, value_range=(-2.0, 5.0))
    fit = fit_mixture(hist, 2)
    assert sum(c.weight for c in fit.components) <= 1.0 + 1e-12

    # the reported residual belongs to the returned components
    cdf = np.array([stats.norm.cdf(hist.bin_edges, c.center, c.width) for c in fit.components])
    weights = np.array([c.weight for c in fit.components])
    expected = hist.total * (weights[:, None] * np.diff(cdf, axis=1)).sum(axis=0)
    chi_square = np.sum(((expected - hist.counts) / np.sqrt(np.maximum(hist.counts, 1.0))) ** 2)
    assert fit.residual == pytest.approx(chi_square, rel=1e-9)


def test_too_few_occupied_bins():
    hist = TesHistogram.from_arrays(np.arange(11.0), [0, 5, 9, 5, 0, 0, 0, 4, 0, 0])
    with pytest.raises(ValueError, match="occupied bins"):
        fit_mixture(hist, 2)


def test_windows_tile_the_range():
    fit = MixtureFit.from_components(
        [(0.5, 0.0, 0.3), (0.3, 1.0, 0.3), (0.2, 2.2, 0.4)], low=-1.0, high=4.0
    )
    windows = fit.acceptance_windows
    assert windows[0][0] == -1.0 and windows[-1][1] == 4.0
    for (_, high), (low, _) in zip(windows[:-1], windows[1:]):
        assert high == low
    assert [w[1] for w in windows[:-1]] == pytest.approx([0.5, 1.6])


def test_mixture_description_round_trips():
    fit = MixtureFit.from_components([(0.7, 0.0, 0.2), (0.3, 1.0, 0.25)], low=-1.0, high=2.0, residual=12.5)
    restored = MixtureFit.from_dict(fit.to_dict())
    assert restored.components == fit.components
    assert restored.acceptance_windows == fit.acceptance_windows
    np.testing.assert_array_equal(restored.misassign_out, fit.misassign_out)
    assert restored.residual == 12.5


def test_malformed_mixture_description():
    with pytest.raises(ValueError, match="malformed"):
        MixtureFit.from_dict({"components": []})


@pytest.mark.parametrize(
    "components",
    [[], [(0.5, 1.0, 0.2), (0.5, 0.0, 0.2)], [(0.5, 0.0, 0.0)], [(0.8, 0.0, 0.2), (0.8, 1.0, 0.2)]],
)
def test_invalid_components(components):
    with pytest.raises(ValueError):
        MixtureFit.from_components(components, low=-1.0, high=2.0)


# ---------------------------------------------------------------------------
# Misassignment
# ---------------------------------------------------------------------------


def test_equal_peaks_misassign_one_sigma_tail():
    fit = MixtureFit.from_components([(0.5, 0.0, 1.0), (0.5, 2.0, 1.0)], low=-5.0, high=7.0)
    tail = stats.norm.cdf(-1.0)
    np.testing.assert_allclose(fit.misassign_out, [tail, tail], rtol=1e-12)
    np.testing.assert_allclose(fit.misassign_in, [tail, tail], rtol=1e-12)


def test_misassignment_follows_bayes_rule():
    fit = MixtureFit.from_components([(0.7, 0.0, 1.0), (0.3, 2.0, 1.0)], low=-5.0, high=7.0)
    inside, outside = stats.norm.cdf(1.0), stats.norm.cdf(-1.0)
    misassign_in, misassign_out = misassignment_probabilities(fit)
    assert misassign_in[0] == pytest.approx(0.3 * outside / (0.7 * inside + 0.3 * outside), abs=1e-9)
    assert misassign_in[1] == pytest.approx(0.7 * outside / (0.3 * inside + 0.7 * outside), abs=1e-9)
    np.testing.assert_allclose(misassign_out, [outside, outside], atol=1e-9)


def test_fitted_overlapping_peaks_follow_gaussian_tails(rng):
    truth = [GaussianComponent(0.5, 0.0, 1.0), GaussianComponent(0.5, 2.0, 1.0)]
    hist = TesHistogram.from_events(mixture_events(rng, truth, 400_000), bins=120, value_range=(-5.0, 7.0))
    fit = fit_mixture(hist, 2)
    assert [c.center for c in fit.components] == pytest.approx([0.0, 2.0], abs=0.05)

    low, high = fit.components
    boundary = fit.boundaries[1]
    low_inside = stats.norm.cdf(boundary, low.center, low.width)
    high_inside = stats.norm.sf(boundary, high.center, high.width)
    np.testing.assert_allclose(fit.misassign_out, [1.0 - low_inside, 1.0 - high_inside], atol=1e-6)
    low_window = low.weight * low_inside + high.weight * (1.0 - high_inside)
    high_window = high.weight * high_inside + low.weight * (1.0 - low_inside)
    np.testing.assert_allclose(
        fit.misassign_in,
        [high.weight * (1.0 - high_inside) / low_window, low.weight * (1.0 - low_inside) / high_window],
        atol=1e-6,
    )
    assert fit.misassign_out == pytest.approx([stats.norm.cdf(-1.0)] * 2, abs=0.02)


def test_separated_peaks_do_not_misassign():
    fit = MixtureFit.from_components([(0.5, 0.0, 1.0), (0.5, 40.0, 1.0)], low=-5.0, high=45.0)
    assert np.all(fit.misassign_in < 1e-12)
    assert np.all(fit.misassign_out < 1e-12)


# ---------------------------------------------------------------------------
# Counting
# ---------------------------------------------------------------------------


TWO_PEAKS = MixtureFit.from_components([(0.5, 0.0, 0.1), (0.5, 1.0, 0.1)], low=-1.0, high=2.0)


def test_boundary_values_go_to_the_lower_window():
    record = assign_counts([0.5, -1.0, 2.0, 0.49, 0.51], TWO_PEAKS)
    assert record.counts.tolist() == [3, 2]
    assert record.overflow == 0


def test_values_outside_the_range_overflow():
    record = assign_counts([-1.5, 0.1, 0.9, 2.5, np.nan], TWO_PEAKS)
    assert record.counts.tolist() == [1, 1]
    assert record.overflow == 3
    assert record.total == 5
    np.testing.assert_allclose(record.rates, [0.2, 0.2])


def test_no_events():
    record = assign_counts([], TWO_PEAKS)
    assert record.total == 0
    assert record.counts.tolist() == [0, 0]
    np.testing.assert_array_equal(record.rates, [0.0, 0.0])


def test_error_bars_bracket_the_rate():
    record = assign_counts(np.linspace(-0.5, 1.5, 101), TWO_PEAKS, confidence=0.95)
    assert np.all(record.err_lo > 0) and np.all(record.err_hi > 0)
    assert np.all(record.rates - record.err_lo >= 0)
    frame = record.to_frame()
    assert list(frame.columns) == ["n", "count", "rate", "err_lo", "err_hi"]
    assert record.to_dict()["confidence"] == 0.95


def test_invalid_confidence():
    with pytest.raises(ValueError):
        assign_counts([0.1], TWO_PEAKS, confidence=1.0)


def test_error_bars_cover_true_weights(rng):
    truth = [GaussianComponent(0.5, 0.0, 1.0), GaussianComponent(0.3, 4.0, 1.0), GaussianComponent(0.2, 8.0, 1.0)]
    fit = MixtureFit.from_components(truth, low=-6.0, high=14.0)
    weights = np.array([c.weight for c in truth])
    covered = []
    for _ in range(20):
        record = assign_counts(mixture_events(rng, truth, 100_000), fit, confidence=0.95)
        covered.extend((record.rates - record.err_lo <= weights) & (weights <= record.rates + record.err_hi))
    assert np.mean(covered) >= 0.95


# ---------------------------------------------------------------------------
# Allan variance
# ---------------------------------------------------------------------------


def test_constant_series_has_no_allan_variance():
    np.testing.assert_array_equal(allan_variance(np.full(64, 3.2), [1, 2, 4, 8]), np.zeros(4))


def test_white_noise_averages_down(rng):
    blocks = 2 ** np.arange(9)
    variance = allan_variance(rng.normal(0.0, 2.0, 2**16), blocks)
    assert variance[0] == pytest.approx(4.0, rel=0.05)
    slope = np.polyfit(np.log(blocks), np.log(variance), 1)[0]
    assert slope == pytest.approx(-1.0, abs=0.1)


def test_drift_grows_with_block_size(rng):
    series = 0.01 * np.arange(512) + rng.normal(0.0, 0.05, 512)
    variance = allan_variance(series, [1, 4, 16, 64])
    assert np.all(np.diff(variance) > 0)


def test_two_block_allan_variance():
    assert allan_variance([1.0, 1.0, 3.0, 3.0], [2]).tolist() == pytest.approx([2.0])


def test_block_size_order_is_kept():
    series = np.arange(32.0) ** 1.5
    np.testing.assert_allclose(allan_variance(series, [4, 1]), allan_variance(series, [1, 4])[::-1])


@pytest.mark.parametrize("blocks", [[6], [], [0], [1.5]])
def test_invalid_block_sizes(blocks):
    with pytest.raises(ValueError):
        allan_variance(np.arange(10.0), blocks)


def test_allan_frame(fixture_path):
    series = np.loadtxt(fixture_path("series.csv"), delimiter=",", skiprows=1)
    frame = allan_frame(series, [1, 2, 4, 8])
    assert list(frame.columns) == ["block_size", "allan_variance", "allan_deviation"]
    np.testing.assert_allclose(frame["allan_deviation"] ** 2, frame["allan_variance"])
