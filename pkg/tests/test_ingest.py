import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cellcast.errors import ParseError, ValidationError
from cellcast.ingest import (
    HourlyAggregator,
    HourlyCellSeries,
    RawRecord,
    Regime,
    SyntheticSpec,
    aggregate_hourly,
    generate_synthetic,
    ingest_directory,
    local_midnight_hour,
    parse_record,
    read_series_cache,
    read_series_csv,
    select_central_cells,
    write_series_cache,
    write_series_csv,
)

T0 = 1383260400000  # 2013-11-01 00:00 Europe/Rome


def test_parse_full_record():
    r = parse_record("1\t1383260400000\t39\t0.1\t0.2\t0.3\t0.4\t5.0")
    assert r == RawRecord(1, T0, 39, 0.1, 0.2, 0.3, 0.4, 5.0)
    assert r.activity("internet") == 5.0
    assert r.activity("total") == pytest.approx(6.0)


def test_parse_empty_activity_fields_are_zero():
    r = parse_record("42\t1383260400000\t39\t\t\t\t\t")
    assert (r.sms_in, r.sms_out, r.call_in, r.call_out, r.internet) == (0, 0, 0, 0, 0)
    # missing trailing fields entirely
    assert parse_record("42\t1383260400000\t39").internet == 0.0


def test_parse_errors():
    with pytest.raises(ParseError, match="line 7"):
        parse_record("abc\t1383260400000\t39\t1", line_number=7)
    with pytest.raises(ParseError):
        parse_record("1\tnope\t39")
    with pytest.raises(ParseError):
        parse_record("1\t1383260400000")
    with pytest.raises(ValidationError):
        parse_record("1\t1383260400000\t39\t-1")
    with pytest.raises(ValidationError):
        parse_record("10001\t1383260400000\t39")
    with pytest.raises(ValidationError):
        parse_record("1\t1383260400001\t39")


def _rec(cell, slot, internet, code=39):
    return RawRecord(cell, T0 + slot * 600_000, code, internet=internet)


def test_six_slots_sum_into_one_hour():
    h0 = T0 // 3_600_000
    out = aggregate_hourly([_rec(5, s, 1.0) for s in range(6)], "internet", (h0, h0 + 24))
    assert out[5].values[0] == 6.0
    assert out[5].values[1:].sum() == 0.0


def test_country_codes_are_summed():
    h0 = T0 // 3_600_000
    out = aggregate_hourly([_rec(5, 0, 2.0, 39), _rec(5, 0, 3.0, 33)], "internet", (h0, h0 + 1))
    assert out[5].values[0] == 5.0


def test_missing_hour_is_zero_and_out_of_span_skipped():
    h0 = T0 // 3_600_000
    agg = HourlyAggregator("internet", (h0, h0 + 24))
    agg.update([_rec(1, 6 * 6, 4.0), _rec(1, 6 * 30, 9.0)])
    out = agg.result()
    assert out[1].values[7] == 0.0
    assert out[1].values[6] == 4.0
    assert agg.skipped == 1
    assert len(out[1]) == 24


def test_empty_stream_gives_empty_map():
    assert aggregate_hourly([], "internet", (0, 24)) == {}


def test_bad_selector_and_span():
    with pytest.raises(ValidationError):
        aggregate_hourly([], "sms", (0, 1))
    with pytest.raises(ValidationError):
        aggregate_hourly([], "internet", (5, 5))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(1, 20), st.integers(-12, 60), st.floats(0, 1e4)), max_size=80),
       st.sampled_from(["internet", "total"]))
def test_aggregation_conserves_mass(items, selector):
    h0 = T0 // 3_600_000
    span = (h0, h0 + 8)
    records = [RawRecord(c, T0 + s * 600_000, 39, 1.0, 0.5, 0.0, 2.0, v) for c, s, v in items]
    out = aggregate_hourly(records, selector, span)
    inside = [r.activity(selector) for r in records if span[0] <= r.hour < span[1]]
    total = sum(float(s.values.sum()) for s in out.values())
    assert math.isclose(total, math.fsum(inside), rel_tol=1e-9, abs_tol=1e-9)


def test_merge_is_order_independent():
    h0 = T0 // 3_600_000
    a = [_rec(1, s, 0.1 * s) for s in range(12)]
    b = [_rec(1, s, 0.3) for s in range(3, 9)] + [_rec(2, 1, 7.0)]
    ab = HourlyAggregator("internet", (h0, h0 + 2)).update(a).merge(HourlyAggregator("internet", (h0, h0 + 2)).update(b))
    ba = HourlyAggregator("internet", (h0, h0 + 2)).update(b).merge(HourlyAggregator("internet", (h0, h0 + 2)).update(a))
    ra, rb = ab.result(), ba.result()
    assert ra.keys() == rb.keys()
    for c in ra:
        np.testing.assert_array_equal(ra[c].values, rb[c].values)


def test_ingest_directory(tmp_path):
    d = tmp_path / "raw"
    d.mkdir()
    (d / "day1.txt").write_text(f"3\t{T0}\t39\t\t\t\t\t1.5\n3\t{T0 + 600000}\t39\t\t\t\t\t2.5\n")
    (d / "day2.txt").write_text(f"3\t{T0 + 3600000}\t0\t1\t1\t1\t1\t1\n\n")
    h0 = local_midnight_hour("2013-11-01")
    assert h0 == T0 // 3_600_000
    series, skipped = ingest_directory(d, "total", (h0, h0 + 24), jobs=2)
    assert skipped == 0
    np.testing.assert_array_equal(series[3].values[:3], [4.0, 5.0, 0.0])


def test_central_cells_default():
    ids = select_central_cells(100, 30)
    assert len(ids) == 900
    assert min(ids) == 3536 == 35 * 100 + 36
    rows = {(i - 1) // 100 + 1 for i in ids}
    cols = {(i - 1) % 100 + 1 for i in ids}
    assert rows == cols == set(range(36, 66))


def test_central_cells_brute_force_4x4():
    # enumerate the 4x4 grid and keep cells whose row and col are both central
    expected = {r * 4 + c + 1 for r in range(4) for c in range(4) if r in (1, 2) and c in (1, 2)}
    assert select_central_cells(4, 2) == expected == {6, 7, 10, 11}


@given(st.integers(1, 40), st.integers(0, 20))
def test_central_cells_count_and_orientation(block, margin):
    grid = block + 2 * margin
    ids = select_central_cells(grid, block)
    assert len(ids) == block * block
    assert all(1 <= i <= grid * grid for i in ids)
    flipped = {(grid - 1 - (i - 1) // grid) * grid + (i - 1) % grid + 1 for i in ids}
    mirrored = {((i - 1) // grid) * grid + (grid - 1 - (i - 1) % grid) + 1 for i in ids}
    assert flipped == ids == mirrored


def test_central_cells_parity_error():
    with pytest.raises(ValidationError):
        select_central_cells(100, 31)
    with pytest.raises(ValidationError):
        select_central_cells(10, 12)


def _spec(sigma=0.0, n=200, seed=7, peaks=(15, 21)):
    regimes = tuple(Regime(p, 100.0, 200.0, sigma, 1.0 / len(peaks)) for p in peaks)
    return SyntheticSpec(n, regimes, 30, seed)


def test_noiseless_peak_is_exact():
    series, _ = generate_synthetic(_spec(peaks=(15,), n=10))
    for s in series.values():
        assert set(np.argmax(s.values.reshape(30, 24), axis=1)) == {15}


def test_synthetic_is_deterministic():
    a, la = generate_synthetic(_spec(0.2))
    b, lb = generate_synthetic(_spec(0.2))
    assert la == lb
    for c in a:
        np.testing.assert_array_equal(a[c].values, b[c].values)
    c, _ = generate_synthetic(_spec(0.2, seed=8))
    assert any(not np.array_equal(a[i].values, c[i].values) for i in a)


def test_synthetic_regime_counts():
    _, labels = generate_synthetic(_spec(0.2))
    counts = np.bincount(list(labels.values()))
    assert counts.tolist() == [100, 100]
    # largest-remainder rounding for uneven fractions: 7 * (0.5, 0.3, 0.2) = (3.5, 2.1, 1.4) -> (4, 2, 1)
    regimes = (Regime(1, 1, 1, 0, 0.5), Regime(2, 1, 1, 0, 0.3), Regime(3, 1, 1, 0, 0.2))
    _, labels = generate_synthetic(SyntheticSpec(7, regimes, 1, 0))
    assert np.bincount(list(labels.values())).tolist() == [4, 2, 1]


@pytest.mark.parametrize(
    "regimes",
    [
        (Regime(15, 1, 1, 0, 0.5), Regime(15, 1, 1, 0, 0.5)),
        (Regime(15, 1, 1, 0, 0.6), Regime(16, 1, 1, 0, 0.6)),
        (Regime(24, 1, 1, 0, 1.0),),
        (Regime(3, 0, 1, 0, 1.0),),
    ],
)
def test_synthetic_spec_validation(regimes):
    with pytest.raises(ValidationError):
        generate_synthetic(SyntheticSpec(10, regimes, 2, 0))


def test_series_csv_and_cache_round_trip(tmp_path):
    series, _ = generate_synthetic(_spec(0.2, n=5))
    write_series_csv(series, tmp_path / "s.csv")
    write_series_cache(series, tmp_path / "s.bin")
    assert (tmp_path / "s.csv").read_text().splitlines()[0] == "cell_id,hour_index,value"
    for loaded in (read_series_csv(tmp_path / "s.csv"), read_series_cache(tmp_path / "s.bin")):
        assert loaded.keys() == series.keys()
        for c in series:
            assert loaded[c].start_hour == series[c].start_hour
            np.testing.assert_array_equal(loaded[c].values, series[c].values)
    assert (tmp_path / "s.bin").read_bytes()[:8] == b"CCSERIES"


def test_cache_rejects_bad_magic(tmp_path):
    (tmp_path / "x.bin").write_bytes(b"garbage!" + bytes(40))
    with pytest.raises(ParseError):
        read_series_cache(tmp_path / "x.bin")


def test_series_rejects_negative_values():
    with pytest.raises(ValidationError):
        HourlyCellSeries(1, 0, [1.0, -2.0])
