"""One test per acceptance criterion; each prints a PASS/FAIL line."""
import calendar
import time
from datetime import date, datetime, timedelta, timezone

import numpy as np

from stormflow.climatology import (GridSpec, LabelDomain, StormDB, StormReport,
                                   build_density_grid, earliest_storm_time, label_vortex)
from stormflow.descriptors import N_FEATURES, batch_extract
from stormflow.evaluation import ablation_run
from stormflow.field_analysis import (deformation_parts, divergence, helmholtz_decompose,
                                      q_criterion, q_criterion_forms, vorticity)
from stormflow.forest import Forest, ForestConfig, cross_validate, train
from stormflow.geo_imaging import FrameSequence
from stormflow.optical_flow import FlowField, diffuse_fft, lucas_kanade_dense
from stormflow.pipeline.cli import main
from stormflow.synthetic import (Rankine, RigidRotation, Shear, Translation, band_limited_texture,
                                 grid_transform, render_pair, render_sequence, sample_field,
                                 write_demo_dataset)

from conftest import interior

UTC = timezone.utc
T1 = datetime(2008, 5, 25, 12, 45, tzinfo=UTC)


def smooth_field(seed, n):
    t = grid_transform(n, n)
    u = band_limited_texture(seed, t.shape, cutoff=0.1) - 0.5
    v = band_limited_texture(seed + 10_000, t.shape, cutoff=0.1) - 0.5
    return FlowField(3 * u, 3 * v, np.ones(t.shape, bool), t, T1, T1)


def test_field_calculus_exactness(acceptance):
    t0 = time.perf_counter()
    grid = grid_transform(256, 256)
    rot = sample_field(RigidRotation((127.3, 120.9), 0.1), grid)
    shear = sample_field(Shear(0.3, 100.0), grid)
    w, d, q = vorticity(rot), divergence(rot), q_criterion(rot)
    qs = q_criterion(shear)
    elapsed = time.perf_counter() - t0
    errs = dict(vorticity=np.abs(interior(w.values, 1) - 0.2).max(),
                divergence=np.abs(interior(d.values, 1)).max(),
                q_rotation=np.abs(interior(q.values, 1) - 0.01).max(),
                q_shear=np.abs(interior(qs.values, 1)).max())
    ok = all(e <= 1e-10 for e in errs.values()) and elapsed < 1.0
    acceptance("field calculus exactness", ok,
               ", ".join(f"{k} err {v:.1e}" for k, v in errs.items())
               + f" (tol 1e-10), {elapsed:.2f} s (< 1 s)")


def test_q_dual_form_agreement(acceptance):
    worst = 0.0
    for seed in range(50):
        f = smooth_field(seed, 64)
        qa, qb, ok = q_criterion_forms(f)
        S, Om, _ = deformation_parts(f)
        scale = 0.5 * (np.sum(S * S, axis=(-2, -1)) + np.sum(Om * Om, axis=(-2, -1)))
        rel = np.abs(qa - qb)[ok] / np.maximum(scale[ok], np.finfo(float).tiny)
        worst = max(worst, float(rel.max()))
    acceptance("Q dual-form agreement", worst <= 1e-12,
               f"max relative difference {worst:.1e} over 50 fields (tol 1e-12)")


def test_helmholtz_hodge(acceptance):
    t0 = time.perf_counter()
    recon = cross = 0.0
    for seed in range(20):
        f = smooth_field(100 + seed, 256)
        sol, irr = helmholtz_decompose(f)
        recon = max(recon, np.abs(sol.u + irr.u - f.u).max() / np.abs(f.u).max(),
                    np.abs(sol.v + irr.v - f.v).max() / np.abs(f.v).max())
        scale = max(np.abs(vorticity(f).values).max(), np.abs(divergence(f).values).max())
        cross = max(cross, np.abs(interior(divergence(sol).values, 1)).max() / scale,
                    np.abs(interior(vorticity(irr).values, 1)).max() / scale)
    elapsed = time.perf_counter() - t0
    eps = np.finfo(float).eps
    ok = recon <= 4 * eps and cross <= 1e-6 and elapsed < 10.0
    acceptance("Helmholtz-Hodge", ok,
               f"reconstruction {recon / eps:.1f} eps (<= 4 eps), cross-terms {cross:.1e} "
               f"x scale (tol 1e-6), {elapsed:.1f} s (< 10 s)")


def test_spectral_diffusion(acceptance):
    t = grid_transform(40, 32)
    nu, dt = 0.02, 1.5
    h, w = t.shape
    y, x = np.mgrid[0:h, 0:w] + 0.5
    worst = 0.0
    modes = [(1, 0), (0, 1), (2, 3), (5, 1), (4, 4), (7, 2), (3, 9), (10, 0), (1, 12), (6, 6)]
    mask = np.ones(t.shape, bool)
    for mx, my in modes:
        a = np.cos(np.pi * mx * x / w) * np.cos(np.pi * my * y / h)
        out = diffuse_fft(FlowField(a, a, mask, t, T1, T1), nu, dt)
        expect = np.exp(-nu * ((mx / 2) ** 2 + (my / 2) ** 2) * dt)
        big = np.abs(a) > 0.1
        worst = max(worst, np.abs(out.u[big] / a[big] / expect - 1).max())
    r = np.random.default_rng(0)
    f = FlowField(r.standard_normal(t.shape), r.standard_normal(t.shape), mask, t, T1, T1)
    g = diffuse_fft(f, 0.0, 1.0)
    identity = np.array_equal(g.u, f.u) and np.array_equal(g.v, f.v)
    acceptance("spectral diffusion", worst <= 1e-6 and identity,
               f"max relative error {worst:.1e} over 10 modes (tol 1e-6), "
               f"nu=0 bit-identical: {identity}")


def test_optical_flow(acceptance):
    pr = render_pair(3, Translation(3, 1))
    f = lucas_kanade_dense(pr.prev, pr.next)
    epe = float(np.hypot(f.u - 3, f.v - 1)[16:-16, 16:-16].mean())
    z = lucas_kanade_dense(pr.prev, pr.prev)
    zero = not z.u.any() and not z.v.any()
    acceptance("optical flow", epe <= 0.5 and zero,
               f"translation (3,1) mean endpoint error {epe:.3f} px (tol 0.5), "
               f"identical frames zero: {zero}")


def test_end_to_end_synthetic_detection(acceptance):
    t0 = time.perf_counter()
    omega, centre = 0.05, (127.3, 128.6)
    res = batch_extract(FrameSequence(render_sequence(1, Rankine(centre, 20.0, omega), 2)),
                        keep_pairs=True)
    regions = res.pairs[0].regions
    shear = batch_extract(FrameSequence(render_sequence(1, Shear(0.01, 128.0), 2)))
    elapsed = time.perf_counter() - t0
    ok = len(regions) == 1 and len(shear.items) == 0 and elapsed < 30.0
    detail = f"{len(regions)} Rankine region(s), {len(shear.items)} shear region(s)"
    if len(regions) == 1:
        cx, cy = regions[0].centroid_px
        err = float(np.hypot(cx - centre[0], cy - centre[1]))
        w7 = res.items[0][0].w7
        rel = abs(w7 / omega ** 2 - 1)
        ok = ok and err <= 1.0 and rel <= 0.1
        detail += f", centroid error {err:.2f} px (tol 1), w7/omega^2 - 1 = {rel:.3f} (tol 0.1)"
    acceptance("end-to-end synthetic detection", ok, detail + f", {elapsed:.1f} s (< 30 s)")


# ------------------------------------------------------------- climatology

def scan_label(reports, lat, lon, t):
    return any(abs(r.lat - lat) < 3 and abs(r.lon - lon) < 3
               and t - timedelta(minutes=30) <= r.time <= t + timedelta(hours=2)
               for r in reports)


def scan_earliest(reports, lat, lon, t):
    hits = [r.time for r in reports
            if abs(r.lat - lat) < 3 and abs(r.lon - lon) < 3 and r.time > t - timedelta(hours=2)]
    return min(hits) if hits else None


def scan_counts(reports, query, years, spec):
    counts = np.zeros((spec.n_lat, spec.n_lon), np.int64)
    for r in reports:
        i = int(np.floor((r.lon - spec.lon_min) / spec.cell_deg))
        j = int(np.floor((r.lat - spec.lat_min) / spec.cell_deg))
        if not (0 <= i < spec.n_lon and 0 <= j < spec.n_lat):
            continue
        for y in years:
            d = query.day
            if (query.month, d) == (2, 29) and not calendar.isleap(y):
                d = 28
            if abs((r.time.date() - date(y, query.month, d)).days) <= 5:
                counts[j, i] += 1
                break
    return counts


class _V:
    def __init__(self, lon, lat, t):
        self.centroid_geo, self.timestamp = (lon, lat), t


def test_climatology_oracle(acceptance):
    world = LabelDomain(-180, 180, -90, 90)
    start = datetime(2004, 1, 1, tzinfo=UTC)
    mismatches = 0
    for seed in range(1000):
        r = np.random.default_rng(seed)
        n = 40
        reports = [StormReport(start + timedelta(minutes=int(m)), float(la), float(lo), "hail")
                   for m, la, lo in zip(r.integers(0, 5 * 365 * 1440, n), r.uniform(15, 55, n),
                                        r.uniform(-130, -55, n))]
        db = StormDB(reports)
        k = int(r.integers(n))
        lat = reports[k].lat + r.uniform(-4, 4)
        lon = reports[k].lon + r.uniform(-4, 4)
        t = reports[k].time + timedelta(minutes=int(r.integers(-180, 180)))
        q = reports[k].time.date() + timedelta(days=int(r.integers(-6, 7)))
        same = (label_vortex(db, _V(lon, lat, t), world) == scan_label(reports, lat, lon, t)
                and earliest_storm_time(db, lat, lon, t) == scan_earliest(reports, lat, lon, t)
                and np.array_equal(build_density_grid(db, q).counts,
                                   scan_counts(reports, q, db.coverage_years, GridSpec())))
        mismatches += not same
    seven = [StormReport(datetime(2000 + k, 5, 20 + k % 5, tzinfo=UTC), 41.0, -90.0, "hail")
             for k in range(7)]
    g = build_density_grid(StormDB(seven, range(1995, 2009)), date(2004, 5, 22))
    exact = g.rho_at(-90.0, 41.0)[()] == 7 / 154
    acceptance("climatology oracle equivalence", mismatches == 0 and exact,
               f"{mismatches} mismatches in 1000 instances (label, earliest storm, density); "
               f"7 storms -> {float(g.rho.max())!r} == 7/154: {exact}")


def test_labeling_boundary_semantics(acceptance):
    T = datetime(2008, 5, 25, 15, 0, tzinfo=UTC)
    eps_t, eps_d = timedelta(microseconds=1), 1e-7
    lat, lon = 35.0, -97.0
    cases = [
        ("t-30min", dict(dt=-timedelta(minutes=30)), True),
        ("t-30min-eps", dict(dt=-timedelta(minutes=30) - eps_t), False),
        ("t+2h", dict(dt=timedelta(hours=2)), True),
        ("t+2h+eps", dict(dt=timedelta(hours=2) + eps_t), False),
        ("dlat 3-eps", dict(dlat=3 - eps_d), True),
        ("dlat 3", dict(dlat=3.0), False),
        ("dlon 3-eps", dict(dlon=-(3 - eps_d)), True),
        ("dlon 3", dict(dlon=-3.0), False),
    ]
    wrong = []
    for name, kw, want in cases:
        rep = StormReport(T + kw.get("dt", timedelta(0)), lat + kw.get("dlat", 0.0),
                          lon + kw.get("dlon", 0.0), "hail")
        got = label_vortex(StormDB([rep]), _V(lon, lat, T))
        if got is not want:
            wrong.append(name)
    acceptance("labeling boundary semantics", not wrong,
               f"{len(cases) - len(wrong)}/{len(cases)} edge cases (+-eps around both time "
               f"edges and both spatial axes)" + (f"; wrong: {wrong}" if wrong else ""))


# ------------------------------------------------------------- learning

def test_forest(acceptance, tmp_path):
    r = np.random.default_rng(0)
    X = r.standard_normal((400, N_FEATURES))
    y = X[:, 6] > 0
    X[:, 6] += np.where(y, 0.5, -0.5)
    Xn, yn = r.standard_normal((400, N_FEATURES)), r.random(400) < 0.5
    cfg = ForestConfig(n_trees=25, seed=3)
    a, b = train(X, y, cfg), train(X, y, cfg)
    a.save(tmp_path / "a.json")
    b.save(tmp_path / "b.json")
    identical = (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()
    sep = cross_validate(X, y, 10, cfg).pooled.overall
    noise = cross_validate(Xn, yn, 10, cfg).pooled.overall
    probe = r.standard_normal((500, N_FEATURES)) * 2
    back = Forest.load(tmp_path / "a.json")
    round_trip = np.array_equal(a.scores(probe), back.scores(probe))
    ok = identical and sep >= 0.95 and 0.4 <= noise <= 0.6 and round_trip
    acceptance("forest", ok,
               f"bit-identical model files: {identical}, separable 10-fold {sep:.3f} (>= 0.95), "
               f"noise 10-fold {noise:.3f} (in [0.4, 0.6]), round-trip predictions: {round_trip}")


def _informative_on(column, n=300, seed=0):
    r = np.random.default_rng(seed)
    X = r.standard_normal((n, N_FEATURES))
    y = np.zeros(n, bool)
    y[: n // 2] = True
    r.shuffle(y)
    X[:, column] += np.where(y, 1.5, -1.5)
    return X, y


def test_ablation_directions(acceptance):
    cfg = ForestConfig(n_trees=20, seed=1)
    acc = {}
    for name, column in (("prior-informative", 7), ("visual-informative", 6)):
        res = ablation_run(*_informative_on(column), cfg, k=10)
        acc[name] = {k: v.pooled.overall for k, v in res.items()}
    p, v = acc["prior-informative"], acc["visual-informative"]
    ok = p["prior"] > p["visual"] and v["visual"] > v["prior"]
    acceptance("ablation direction checks", ok,
               f"w8-only data: prior {p['prior']:.3f} vs visual {p['visual']:.3f}; "
               f"w7-only data: visual {v['visual']:.3f} vs prior {v['prior']:.3f}")


def test_pipeline_determinism(acceptance, tmp_path_factory):
    outputs = []
    for k in range(2):
        root = tmp_path_factory.mktemp(f"run{k}")
        cfg = write_demo_dataset(root)
        r = np.random.default_rng(0)
        X = r.normal(0, 1e-4, (200, N_FEATURES))
        y = np.arange(200) % 2 == 0
        X[y, 6] += 0.05 ** 2
        model = root / "model.json"
        train(X, y, ForestConfig(n_trees=15, seed=0)).save(model)
        codes = [main([c, "--config", str(cfg), "--model", str(model)])
                 for c in ("extract", "detect")]
        codes.append(main(["climatology", "--config", str(cfg), "--date", "2008-05-25"]))
        assert codes == [0, 0, 0]
        out = root / "out"
        files = sorted([out / "descriptors.csv", out / "density_2008-05-25.csv",
                        *(out / "detect").glob("*.geojson")])
        outputs.append({f.relative_to(out).as_posix(): f.read_bytes() for f in files})
    same = outputs[0] == outputs[1]
    acceptance("pipeline determinism", same,
               f"{len(outputs[0])} CSV/GeoJSON outputs byte-identical across two runs: {same}")
