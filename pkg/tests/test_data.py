import time
from datetime import datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pcnnbench.data import (CSV_HEADER, Normalizer, RawRecord, as_frame, extract_trajectories,
                            find_gaps, fit_normalizer, generate_synthetic, generate_synthetic_frame,
                            hour_of_day, load_csv, split_dataset, time_features, write_csv)


@pytest.fixture(scope="module")
def year():
    return generate_synthetic_frame(365, seed=0)


def stream(n, start=datetime(2021, 1, 4, tzinfo=timezone.utc), mode="heating"):
    return [RawRecord(start + timedelta(minutes=15 * i), 22.0, 21.0, 5.0, 0.0, 0.0, mode) for i in range(n)]


def test_generator_deterministic_and_seed_sensitive():
    a = generate_synthetic_frame(5, seed=3)
    b = generate_synthetic_frame(5, seed=3)
    c = generate_synthetic_frame(5, seed=4)
    assert np.array_equal(a.t_zone, b.t_zone) and np.array_equal(a.solar, b.solar)
    assert not np.array_equal(a.t_zone, c.t_zone)


def test_generator_rejects_short_runs():
    with pytest.raises(ValueError):
        generate_synthetic(2, seed=0)


def test_generator_year_ranges_and_speed():
    t0 = time.perf_counter()
    fr = generate_synthetic_frame(365, seed=1)
    assert time.perf_counter() - t0 < 60
    assert fr.t_zone.min() >= 5.0 and fr.t_zone.max() <= 40.0
    assert np.all(fr.solar >= 0)
    midnight = hour_of_day(fr.timestamps) == 0.0
    assert midnight.sum() == 365 and np.all(fr.solar[midnight] == 0.0)


def test_generator_power_sign_matches_mode(year):
    assert np.all(year.power[year.cooling] <= 0) and np.all(year.power[~year.cooling] >= 0)
    assert year.cooling.any() and (~year.cooling).any()


def test_generator_cadence(year):
    assert np.all(np.diff(year.timestamps).astype(np.int64) == 15)


def test_csv_round_trip(tmp_path):
    recs = generate_synthetic(3, seed=2)
    p = tmp_path / "d.csv"
    write_csv(p, recs)
    assert p.read_text().splitlines()[0] == ",".join(CSV_HEADER)
    back = load_csv(p)
    assert back == recs


def test_csv_unparsable_fields_become_gaps(tmp_path):
    recs = generate_synthetic(3, seed=2)
    p = tmp_path / "d.csv"
    write_csv(p, recs)
    lines = p.read_text().splitlines()
    parts = lines[10].split(",")
    parts[1] = "n/a"
    lines[10] = ",".join(parts)
    p.write_text("\n".join(lines) + "\n")
    back = load_csv(p)
    assert len(back) == len(recs)
    assert back[9].is_gap and not back[8].is_gap
    assert 9 in find_gaps(back) and 10 in find_gaps(back)


def test_csv_bad_timestamp_reports_lines(tmp_path):
    recs = generate_synthetic(3, seed=2)
    p = tmp_path / "d.csv"
    write_csv(p, recs)
    lines = p.read_text().splitlines()
    lines[5] = "yesterday" + lines[5][lines[5].index(","):]
    lines[7] = "2021-13-45T00:00:00Z" + lines[7][lines[7].index(","):]
    p.write_text("\n".join(lines) + "\n")
    with pytest.raises(ValueError, match="lines 6, 8"):
        load_csv(p)


def test_csv_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("timestamp,t_zone,t_out,solar,power,mode\n")
    with pytest.raises(ValueError, match="t_neigh"):
        load_csv(p)


def test_csv_large_file_parses_quickly(tmp_path):
    fr = generate_synthetic_frame(1042, seed=5, start="2019-01-01")  # 100032 rows
    p = tmp_path / "big.csv"
    write_csv(p, fr)
    t0 = time.perf_counter()
    back = load_csv(p)
    assert time.perf_counter() - t0 < 5.0
    assert len(back) == len(fr) >= 100_000


def _naive_windows(n, max_len=288, stride=4, min_len=48):
    if n >= max_len:
        return [(o, max_len) for o in range(0, n - max_len + 1, stride)]
    return [(0, n)] if n >= min_len else []


@pytest.mark.parametrize("n", [288, 289, 291, 292, 400, 1000])
def test_extract_count_matches_enumeration(n):
    trajs = extract_trajectories(stream(n))
    assert len(trajs) == (n - 288) // 4 + 1 == len(_naive_windows(n))
    assert [t.start for t in trajs] == [o for o, _ in _naive_windows(n)]
    assert all(len(t) == 288 for t in trajs)


def test_extract_short_streams():
    assert extract_trajectories(stream(47)) == []
    got = extract_trajectories(stream(100))
    assert len(got) == 1 and len(got[0]) == 100


def test_extract_missing_step_splits():
    recs = stream(600)
    del recs[300]
    trajs = extract_trajectories(recs)
    assert trajs
    for t in trajs:
        assert not (t.start < 300 <= t.start + len(t) - 1)
        assert np.all(np.diff(t.frame.timestamps).astype(np.int64) == 15)


def test_extract_thirty_minute_gap_surfaces(tmp_path):
    recs = stream(400)
    recs = recs[:200] + recs[201:]
    assert 200 in find_gaps(recs)
    trajs = extract_trajectories(recs)
    assert all(t.start + len(t) <= 200 or t.start >= 200 for t in trajs)


def test_extract_mode_change_splits():
    recs = stream(300) + stream(300, start=datetime(2021, 1, 4, 0, 0, tzinfo=timezone.utc)
                                 + timedelta(minutes=15 * 300), mode="cooling")
    trajs = extract_trajectories(recs)
    assert {t.mode for t in trajs} == {"heating", "cooling"}
    for t in trajs:
        assert np.all(t.frame.cooling == t.frame.cooling[0])


def test_extract_gap_rows_never_inside(tmp_path):
    recs = stream(500)
    recs[250] = RawRecord(recs[250].timestamp, float("nan"), 21.0, 5.0, 0.0, 0.0, None)
    for t in extract_trajectories(recs):
        assert np.all(t.frame.valid) and np.all(np.isfinite(t.frame.t_zone))


@settings(max_examples=25, deadline=None)
@given(n=st.integers(0, 700), holes=st.lists(st.integers(1, 699), max_size=4))
def test_extracted_trajectories_gap_free(n, holes):
    recs = stream(n)
    for h in sorted(set(holes), reverse=True):
        if h < len(recs):
            del recs[h]
    for t in extract_trajectories(recs):
        assert 48 <= len(t) <= 288
        assert np.all(np.diff(t.frame.timestamps).astype(np.int64) == 15)


def test_split_is_time_based_and_disjoint(year):
    sp = split_dataset(year)
    last_train = max(t.frame.timestamps[-1] for t in sp.train)
    first_val = min(t.frame.timestamps[0] for t in sp.validation)
    assert last_train < first_val
    assert len(sp.validation) >= 200
    assert {t.mode for t in sp.validation} == {"heating", "cooling"}


def test_normalizer_affine_example():
    nz = Normalizer({"x": (10.0, 30.0)})
    np.testing.assert_allclose(nz.apply("x", [10.0, 30.0, 20.0]), [0.1, 0.9, 0.5], atol=1e-15)
    assert nz.apply("x", 40.0) > 0.9 and nz.apply("x", 0.0) < 0.1


@settings(max_examples=50, deadline=None)
@given(lo=st.floats(-50, 50), width=st.floats(0.1, 100), x=st.floats(-200, 200))
def test_normalizer_inverse(lo, width, x):
    nz = Normalizer({"x": (lo, lo + width)})
    assert abs(nz.invert("x", nz.apply("x", x)) - x) <= 1e-12 * max(1.0, abs(x), abs(lo) + width)


def test_normalizer_rejects_constant():
    with pytest.raises(ValueError):
        Normalizer({"x": (1.0, 1.0)})


def test_fit_normalizer_uses_train_only(year):
    sp = split_dataset(year)
    nz = fit_normalizer(sp.train)
    lo, hi = nz.bounds["t_out"]
    assert lo == min(t.frame.t_out.min() for t in sp.train)
    assert hi == max(t.frame.t_out.max() for t in sp.train)
    with pytest.raises(ValueError):
        fit_normalizer([])


def test_time_features_shape_and_range(year):
    f = time_features(year.timestamps[:200])
    assert f.shape == (200, 5)
    assert np.all(np.abs(f[:, :4]) <= 1) and np.all((f[:, 4] >= 0) & (f[:, 4] <= 1))
    # 2021-06-01 was a Tuesday; midnight maps to sin 0, cos 1
    assert f[0, 4] == 1 / 6 and f[0, 0] == 0.0 and f[0, 1] == 1.0


def test_frame_record_round_trip():
    recs = generate_synthetic(3, seed=9)
    assert as_frame(recs).to_records() == recs
