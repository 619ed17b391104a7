import calendar
from datetime import date, datetime, timedelta, timezone
from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from stormflow.climatology import (GridSpec, LabelDomain, StormDB, StormReport,
                                   build_density_grid, earliest_storm_time, ingest_reports,
                                   label_vortex, sample_balanced_training, write_density_csv)
from stormflow.errors import DataError

UTC = timezone.utc
T = datetime(2008, 5, 25, 15, 0, tzinfo=UTC)
US = timedelta(microseconds=1)


def vortex(lon, lat, t=T):
    return SimpleNamespace(centroid_geo=(lon, lat), timestamp=t)


def db_of(*reports, years=None):
    return StormDB([StormReport(t, lat, lon, "hail") for t, lat, lon in reports], years)


# ------------------------------------------------------------- reference scans

def scan_label(reports, lat, lon, t):
    return any(abs(la - lat) < 3 and abs(lo - lon) < 3
               and t - timedelta(minutes=30) <= ti <= t + timedelta(hours=2)
               for ti, la, lo in reports)


def scan_earliest(reports, lat, lon, t):
    hits = [ti for ti, la, lo in reports
            if abs(la - lat) < 3 and abs(lo - lon) < 3 and ti > t - timedelta(hours=2)]
    return min(hits) if hits else None


def scan_density_total(reports, query, years, spec):
    n = 0
    for ti, la, lo in reports:
        inside = spec.lon_min <= lo < spec.lon_min + spec.n_lon * spec.cell_deg and \
            spec.lat_min <= la < spec.lat_min + spec.n_lat * spec.cell_deg
        if not inside:
            continue
        for y in years:
            d = query.day
            if (query.month, d) == (2, 29) and not calendar.isleap(y):
                d = 28
            centre = date(y, query.month, d)
            if abs((ti.date() - centre).days) <= 5:
                n += 1
                break
    return n


# ------------------------------------------------------------- ingest

def write_csv(tmp_path, text):
    p = tmp_path / "storms.csv"
    p.write_text(text)
    return p


def test_ingest_sorts_rows(tmp_path):
    p = write_csv(tmp_path, "time,lat,lon,kind\n"
                  "2008-05-25T18:00:00Z,35.0,-97.0,hail\n"
                  "2008-05-25T16:00:00Z,36.0,-98.0,wind\n"
                  "2008-05-25T17:00:00+00:00,37.0,-99.0,tornado\n")
    db = ingest_reports(p)
    assert len(db) == 3
    assert [db.report(i).kind for i in range(3)] == ["wind", "tornado", "hail"]
    assert db.coverage_years == (2008,)


def test_ingest_names_bad_row(tmp_path):
    p = write_csv(tmp_path, "time,lat,lon,kind\n2008-05-25T18:00:00Z,35,-97,hail\n"
                  "2008-05-25T18:00:00Z,95,-97,hail\n")
    with pytest.raises(DataError, match=r":3: latitude"):
        ingest_reports(p)


def test_ingest_malformed_time(tmp_path):
    p = write_csv(tmp_path, "time,lat,lon,kind\nyesterday,35,-97,hail\n")
    with pytest.raises(DataError, match=":2:"):
        ingest_reports(p)


def test_ingest_keeps_duplicates(tmp_path):
    row = "2008-05-25T18:00:00Z,35.0,-97.0,hail\n"
    assert len(ingest_reports(write_csv(tmp_path, "time,lat,lon,kind\n" + row + row))) == 2


@pytest.mark.parametrize("text", ["", "time,lat,lon,kind\n"])
def test_ingest_empty(tmp_path, text):
    with pytest.raises(DataError):
        ingest_reports(write_csv(tmp_path, text))


# ------------------------------------------------------------- density

def test_density_154_divisor_full_cell():
    years = range(1995, 2009)
    reports = [(datetime(y, 5, 25, 12, tzinfo=UTC) + timedelta(days=k), 30.5, -99.5)
               for y in years for k in range(-5, 6)]
    g = build_density_grid(db_of(*reports), date(2008, 5, 25))
    i, j = int((-99.5 + 124) // 4), int((30.5 - 20) // 4)
    assert g.counts[j, i] == 154
    assert g.rho[j, i] == 1.0
    assert g.rho.sum() == 1.0  # every other cell is empty


def test_density_seven_storms():
    reports = [(datetime(2000 + k, 5, 20 + k % 5, tzinfo=UTC), 41.0, -90.0) for k in range(7)]
    g = build_density_grid(db_of(*reports, years=range(1995, 2009)), date(2004, 5, 22))
    assert g.rho.max() == 7 / 154
    assert g.rho_at(-90.0, 41.0) == 7 / 154
    assert g.rho_at(-130.0, 41.0) == 0


def test_density_window_edges():
    d = date(2008, 7, 10)
    inside = [(datetime(2008, 7, 5, tzinfo=UTC), 30, -100), (datetime(2008, 7, 15, 23, 59, tzinfo=UTC), 30, -100)]
    outside = [(datetime(2008, 7, 4, 23, 59, tzinfo=UTC), 30, -100), (datetime(2008, 7, 16, tzinfo=UTC), 30, -100)]
    assert build_density_grid(db_of(*inside, *outside), d).counts.sum() == 2


def test_feb29_uses_feb28_in_common_years():
    reports = [(datetime(2007, 3, 5, tzinfo=UTC), 30, -100),   # Feb 28 + 5
               (datetime(2007, 3, 6, tzinfo=UTC), 30, -100),   # one day too late
               (datetime(2008, 3, 5, tzinfo=UTC), 30, -100)]   # Feb 29 + 5 in a leap year
    g = build_density_grid(db_of(*reports, years=[2007, 2008]), date(2008, 2, 29))
    assert g.counts.sum() == 2
    assert g.n_years == 2 and g.rho.sum() == 2 / 22


def test_density_translation_shifts_columns():
    r = np.random.default_rng(3)
    base = [(datetime(2008, 6, 1, tzinfo=UTC) + timedelta(hours=int(h)), float(la), float(lo))
            for h, la, lo in zip(r.integers(0, 48, 50), r.integers(21, 50, 50) + 0.25,
                                 r.integers(-123, -70, 50) + 0.25)]
    shifted = [(t, la, lo + 4.0) for t, la, lo in base]
    a = build_density_grid(db_of(*base), date(2008, 6, 2)).counts
    b = build_density_grid(db_of(*shifted), date(2008, 6, 2)).counts
    assert np.array_equal(a[:, :-1], b[:, 1:])


def random_reports(seed, n=60):
    r = np.random.default_rng(seed)
    start = datetime(2004, 1, 1, tzinfo=UTC)
    return [(start + timedelta(minutes=int(m)), float(la), float(lo))
            for m, la, lo in zip(r.integers(0, 5 * 365 * 1440, n), r.uniform(15, 55, n),
                                 r.uniform(-130, -55, n))]


@pytest.mark.parametrize("seed", range(20))
def test_density_total_matches_scan(seed):
    reports = random_reports(seed, 400)
    db = db_of(*reports)
    q = date(2006, 1, 1) + timedelta(days=int(np.random.default_rng(seed).integers(0, 366)))
    g = build_density_grid(db, q)
    assert g.counts.sum() == scan_density_total(reports, q, db.coverage_years, GridSpec())


def test_density_csv(tmp_path):
    g = build_density_grid(db_of((T, 30.0, -100.0)), T.date())
    write_density_csv(g, tmp_path / "d.csv")
    lines = (tmp_path / "d.csv").read_text().splitlines()
    assert lines[0] == "i,j,lon_min,lat_min,rho"
    assert len(lines) == 1 + 16 * 8
    assert "6,2,-100.0,28.0," + repr(1 / 11) in lines


# ------------------------------------------------------------- labels

def test_label_examples():
    lon, lat = -97.0, 35.0
    assert label_vortex(db_of((T + timedelta(hours=2), lat + 2.9, lon)), vortex(lon, lat))
    assert not label_vortex(db_of((T, lat + 3.0, lon)), vortex(lon, lat))
    assert not label_vortex(db_of((T, lat, lon - 3.0)), vortex(lon, lat))
    assert not label_vortex(db_of(), vortex(lon, lat))


@pytest.mark.parametrize("offset,expected", [
    (-timedelta(minutes=30), True),
    (-timedelta(minutes=30) - US, False),
    (timedelta(hours=2), True),
    (timedelta(hours=2) + US, False),
])
def test_label_time_boundaries(offset, expected):
    db = db_of((T + offset, 35.0, -97.0))
    assert label_vortex(db, vortex(-97.0, 35.0)) is expected


@pytest.mark.parametrize("dlat,dlon,expected", [
    (2.9999999, 0.0, True), (3.0, 0.0, False), (0.0, -2.9999999, True), (0.0, -3.0, False),
])
def test_label_space_boundaries(dlat, dlon, expected):
    db = db_of((T, 35.0 + dlat, -97.0 + dlon))
    assert label_vortex(db, vortex(-97.0, 35.0)) is expected


def test_label_outside_domain_is_none():
    db = db_of((T, 45.0, -50.0))
    assert label_vortex(db, vortex(-50.0, 45.0)) is None
    assert label_vortex(db, vortex(-50.0, 45.0), LabelDomain(-60, -40, 40, 50)) is True


def test_polygon_domain(tmp_path):
    tri = tmp_path / "tri.json"
    tri.write_text('{"type": "Polygon", "coordinates": [[[-100, 30], [-90, 30], [-100, 40], [-100, 30]]]}')
    dom = LabelDomain.with_polygon_file(tri)
    assert dom.contains(-98, 32) and not dom.contains(-91, 39)
    assert label_vortex(db_of(), vortex(-91, 39), dom) is None


@pytest.mark.parametrize("seed", range(10))
def test_label_and_earliest_match_scans(seed):
    # 10 databases x 100 queries = 1000 random instances
    reports = random_reports(seed)
    db = db_of(*reports)
    r = np.random.default_rng(1000 + seed)
    for _ in range(100):
        k = r.integers(len(reports))
        t0, la0, lo0 = reports[k]
        lat = la0 + r.uniform(-4, 4)
        lon = lo0 + r.uniform(-4, 4)
        t = t0 + timedelta(minutes=int(r.integers(-180, 180)))
        assert label_vortex(db, vortex(lon, lat, t), LabelDomain(-180, 180, -90, 90)) \
            == scan_label(reports, lat, lon, t)
        assert earliest_storm_time(db, lat, lon, t) == scan_earliest(reports, lat, lon, t)


@given(st.lists(st.tuples(st.integers(-300, 300), st.floats(-5, 5), st.floats(-5, 5)),
                max_size=30),
       st.floats(-2, 2), st.floats(-2, 2))
def test_label_property_against_scan(rows, dlat, dlon):
    reports = [(T + timedelta(minutes=m), 35.0 + a, -97.0 + b) for m, a, b in rows]
    db = db_of(*reports)
    lat, lon = 35.0 + dlat, -97.0 + dlon
    assert label_vortex(db, vortex(lon, lat)) == scan_label(reports, lat, lon, T)
    assert earliest_storm_time(db, lat, lon, T) == scan_earliest(reports, lat, lon, T)


def test_earliest_examples():
    near = (35.5, -97.5)
    db = db_of((T + timedelta(hours=3), *near), (T + timedelta(hours=1), *near))
    assert earliest_storm_time(db, 35.0, -97.0, T) == T + timedelta(hours=1)
    assert earliest_storm_time(db_of((T - timedelta(hours=3), *near)), 35.0, -97.0, T) is None
    assert earliest_storm_time(db_of((T - timedelta(hours=1), *near)), 35.0, -97.0, T) \
        == T - timedelta(hours=1)
    assert earliest_storm_time(db_of((T - timedelta(hours=2), *near)), 35.0, -97.0, T) is None


# ------------------------------------------------------------- sampling

def test_balanced_sampling():
    data = [(i, i < 10) for i in range(110)]
    out = sample_balanced_training(data, seed=4)
    assert len(out) == 20 and sum(l for _, l in out) == 10
    assert out == sample_balanced_training(data, seed=4)
    assert out != sample_balanced_training(data, seed=5)


def test_balanced_sampling_needs_negatives():
    data = [(i, i < 10) for i in range(15)]
    with pytest.raises(DataError):
        sample_balanced_training(data, seed=0)
