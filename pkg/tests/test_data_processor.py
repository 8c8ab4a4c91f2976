import json

import numpy as np
import pandas as pd
import pytest

from utils.analysis import synthesize_dataset
from utils.data_processor import DATASET_COLUMNS, DataProcessor
from utils.errors import DatasetSchemaError
from utils.report_writer import ReportWriter

HEADER = ",".join(DATASET_COLUMNS)


def write_dataset(tmp_path, rows):
    path = tmp_path / "dataset.csv"
    path.write_text("\n".join([HEADER, *rows]) + "\n")
    return str(path)


@pytest.fixture
def processor():
    return DataProcessor()


def test_load_fixture_dataset(processor, fixture_path):
    runs = processor.load_dataset(fixture_path("dataset.csv"))
    assert [run.run_id for run in runs] == ["low", "high"]
    low = runs[0]
    assert low.n.tolist() == [1, 2, 3]
    assert low.mean_photons == pytest.approx(0.152)
    assert np.isnan(low.fidelity[2])
    assert low.herald_prob[0] == pytest.approx(0.1125)


def test_missing_column_is_reported_on_the_header(processor, tmp_path):
    path = tmp_path / "dataset.csv"
    path.write_text("run_id,n,herald_prob\na,1,0.1\n")
    with pytest.raises(DatasetSchemaError) as info:
        processor.load_dataset(str(path))
    assert info.value.line_numbers == [1]
    assert "mean_photons" in str(info.value)


def test_out_of_range_values_report_line_numbers(processor, tmp_path):
    path = write_dataset(
        tmp_path,
        [
            "a,1,0.2,0.01,0.01,0.9,0.01,0.01,0.3",
            "a,2,1.4,0.01,0.01,0.8,0.01,0.01,0.3",
            "b,1,0.1,0.01,0.01,,,,0.5",
        ],
    )
    with pytest.raises(DatasetSchemaError, match="herald_prob") as info:
        processor.load_dataset(path)
    assert info.value.line_numbers == [3]
    assert info.value.to_dict()["line_numbers"] == [3]


def test_non_numeric_values_report_line_numbers(processor, tmp_path):
    path = write_dataset(
        tmp_path,
        [
            "a,1,0.2,0.01,0.01,0.9,0.01,0.01,0.3",
            "a,two,0.1,0.01,0.01,0.8,0.01,0.01,0.3",
        ],
    )
    with pytest.raises(DatasetSchemaError, match="non-numeric") as info:
        processor.load_dataset(path)
    assert info.value.line_numbers == [3]


@pytest.mark.parametrize(
    "rows, message",
    [
        (["a,1,0.2,0.01,0.01,0.9,0.01,0.01,0.3", "a,1,0.1,0.01,0.01,,,,0.3"], "duplicate"),
        (["a,1,0.2,0.01,0.01,0.9,0.01,0.01,0.3", "a,2,0.1,0.01,0.01,,,,0.4"], "differs within a run"),
        (["a,1.5,0.2,0.01,0.01,0.9,0.01,0.01,0.3"], "non-negative integer"),
        (["a,1,0.2,-0.01,0.01,0.9,0.01,0.01,0.3"], "non-negative"),
        (["a,1,0.2,0.01,0.01,0.9,0.01,0.01,0"], "positive"),
    ],
)
def test_schema_violations(processor, tmp_path, rows, message):
    with pytest.raises(DatasetSchemaError, match=message):
        processor.load_dataset(write_dataset(tmp_path, rows))


def test_missing_file(processor, tmp_path):
    with pytest.raises(FileNotFoundError):
        processor.load_dataset(str(tmp_path / "absent.csv"))


def test_dataset_frame_reloads_identically(processor, tmp_path):
    runs = synthesize_dataset(1.61, 0.59, 0.64, [0.5, 0.9], noise=0.01, seed=4)
    path = ReportWriter(str(tmp_path)).write_csv(DataProcessor.dataset_frame(runs), "synthetic")
    reloaded = processor.load_dataset(path)
    assert [run.run_id for run in reloaded] == ["run1", "run2"]
    for original, loaded in zip(runs, reloaded):
        np.testing.assert_array_equal(original.n, loaded.n)
        np.testing.assert_array_equal(original.herald_prob, loaded.herald_prob)
        np.testing.assert_array_equal(original.fidelity, loaded.fidelity)
        assert original.mean_photons == loaded.mean_photons


def test_cached_frames_are_copies(processor, fixture_path):
    first = processor.load_data(fixture_path("dataset.csv"))
    first.loc[0, "n"] = 99
    assert processor.load_data(fixture_path("dataset.csv")).loc[0, "n"] == 1


def test_load_histogram_from_bin_centers(processor, fixture_path):
    hist = processor.load_histogram(fixture_path("histogram.csv"))
    assert hist.counts.size == 33
    np.testing.assert_allclose(hist.centers, np.round(np.arange(-0.40, 1.201, 0.05), 2), atol=1e-12)
    assert hist.range == pytest.approx((-0.425, 1.225))


def test_load_histogram_from_raw_values(processor, fixture_path):
    hist = processor.load_histogram(fixture_path("events.csv"), bins=10, value_range=(-0.5, 1.0))
    assert hist.total == 8
    assert hist.bin_edges.size == 11


def test_load_events_and_series(processor, fixture_path, tmp_path):
    events = processor.load_events(fixture_path("events.csv"))
    assert events.size == 9
    assert events[-1] == 2.5

    weighted = tmp_path / "weighted.csv"
    weighted.write_text("value,count\n0.1,2\n0.7,1\n")
    assert processor.load_events(str(weighted)).tolist() == [0.1, 0.1, 0.7]

    series = processor.load_series(fixture_path("series.csv"))
    assert series.size == 16


def test_value_column_is_required(processor, tmp_path):
    path = tmp_path / "values.csv"
    path.write_text("area\n0.1\n")
    with pytest.raises(DatasetSchemaError):
        processor.load_series(str(path))


def test_negative_counts_are_rejected(processor, tmp_path):
    path = tmp_path / "hist.csv"
    path.write_text("value,count\n0.0,4\n0.1,-1\n")
    with pytest.raises(DatasetSchemaError) as info:
        processor.load_histogram(str(path))
    assert info.value.line_numbers == [3]


# ---------------------------------------------------------------------------
# Report writer
# ---------------------------------------------------------------------------


def test_csv_output_is_deterministic(tmp_path):
    frame = pd.DataFrame({"B": [0.1, 1 / 3], "p_n": [np.nan, 2 / 3]})
    writer = ReportWriter(str(tmp_path))
    first = open(writer.write_csv(frame, "table"), "rb").read()
    second = open(writer.write_csv(frame, "table.csv"), "rb").read()
    assert first == second
    assert first.decode().splitlines() == ["B,p_n", "0.10000000000000001,", "0.33333333333333331,0.66666666666666663"]


def test_json_output_replaces_non_finite_values(tmp_path):
    writer = ReportWriter(str(tmp_path / "nested"))
    path = writer.write_json({"values": np.array([1.0, np.nan]), "count": np.int64(3)}, "report", metadata={"command": "x"})
    document = json.loads(open(path).read())
    assert document["values"] == [1.0, None]
    assert document["count"] == 3
    assert document["metadata"]["command"] == "x"
    assert "numpy" in document["metadata"]["versions"]
    assert list(document) == sorted(document)
