import pytest

from nito.errors import ParameterError
from nito.metrics import (
    CSV_COLUMNS, EvalRecord, aggregate, compliance_error, read_csv, volume_fraction_error, write_csv,
)


def rec(ce, vfe=0.0, id="r"):
    return EvalRecord(id, c_gen=10.0 * (1 + ce / 100.0), c_ref=10.0, vfe_percent=vfe)


def test_compliance_error():
    assert compliance_error(10.5, 10.0) == pytest.approx(5.0)
    assert compliance_error(10.0, 10.0) == 0.0
    assert compliance_error(9.0, 10.0) == pytest.approx(-10.0)
    with pytest.raises(ParameterError):
        compliance_error(1.0, 0.0)


def test_volume_fraction_error():
    assert volume_fraction_error(0.3, 0.3) == 0.0
    assert volume_fraction_error(0.33, 0.30) == pytest.approx(10.0)
    assert volume_fraction_error(0.27, 0.30) == pytest.approx(volume_fraction_error(0.33, 0.30))
    with pytest.raises(ParameterError):
        volume_fraction_error(0.3, 1.0)


def test_single_record():
    s = aggregate([rec(5.0)])
    assert s.ce_mean == pytest.approx(5.0) and s.ce_median == pytest.approx(5.0) and s.outliers == 0


def test_outliers_excluded_but_counted():
    s = aggregate([rec(1.0), rec(2.0), rec(1500.0)])
    assert s.outliers == 1 and s.count == 3
    assert s.ce_mean == pytest.approx(1.5) and s.ce_median == pytest.approx(1.5)


def test_negative_errors_retained():
    s = aggregate([rec(-4.0), rec(2.0), rec(8.0)])
    assert s.ce_median == pytest.approx(2.0) and s.ce_mean == pytest.approx(2.0)


def test_all_outliers_and_empty():
    s = aggregate([rec(2000.0), rec(5000.0)])
    assert s.outliers == 2 and s.ce_mean is None and s.ce_median is None and s.vfe_median is None
    with pytest.raises(ParameterError):
        aggregate([])


def test_threshold_is_strict():
    assert not EvalRecord("a", 11.0, 1.0, 0.0).outlier  # exactly 1000 %
    assert EvalRecord("b", 11.01, 1.0, 0.0).outlier


def test_csv(tmp_path):
    records = [rec(3.0, 0.5, "a"), rec(1200.0, 1.0, "b")]
    write_csv(tmp_path / "r.csv", records)
    rows = read_csv(tmp_path / "r.csv")
    assert tuple(rows[0]) == CSV_COLUMNS
    assert float(rows[0]["ce_percent"]) == records[0].ce_percent
    assert [r["outlier"] for r in rows] == ["0", "1"]
