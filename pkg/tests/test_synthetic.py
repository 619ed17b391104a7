import numpy as np
import pytest
from hypothesis import given, strategies as st

from stormflow.field_analysis import divergence, q_criterion, vorticity
from stormflow.geo_imaging import Channel, load_frame
from stormflow.synthetic import (Composite, Radial, Rankine, RigidRotation, Shear, Translation,
                                 band_limited_texture, grid_transform, render_pair,
                                 render_sequence, sample_field, write_sequence)

from conftest import interior

DOMAIN = grid_transform(64, 64)


def test_translation_is_constant():
    f = sample_field(Translation(3, 1), DOMAIN)
    assert np.all(f.u == 3) and np.all(f.v == 1)


def test_rankine_centre_is_still():
    f = sample_field(Rankine((20, 30), 10, 0.1), DOMAIN)
    assert f.u[30, 20] == 0 and f.v[30, 20] == 0


@given(st.floats(0, 2 * np.pi))
def test_rankine_speed_at_core_radius(angle):
    r = Rankine((0.0, 0.0), 10.0, 0.1)
    x, y = 10 * np.cos(angle), 10 * np.sin(angle)
    u, v = r.evaluate(np.array(x), np.array(y))
    assert np.hypot(u, v) == pytest.approx(1.0, rel=1e-12)


def test_rankine_outer_decay():
    r = Rankine((0.0, 0.0), 10.0, 0.1)
    u, v = r.evaluate(np.array(40.0), np.array(0.0))
    assert np.hypot(u, v) == pytest.approx(0.1 * 100 / 40)


def test_rankine_needs_positive_core():
    with pytest.raises(ValueError):
        Rankine((0, 0), 0.0, 0.1)


def test_rigid_rotation_feeds_field_calculus():
    f = sample_field(RigidRotation((31.5, 30.0), 0.1), DOMAIN)
    assert np.allclose(interior(vorticity(f).values, 1), 0.2, atol=1e-12)
    assert np.allclose(interior(divergence(f).values, 1), 0.0, atol=1e-12)
    assert np.allclose(interior(q_criterion(f).values, 1), 0.01, atol=1e-12)


def test_composite_sums_parts():
    parts = (Translation(1, 2), Shear(0.1, 5.0), Radial((3, 4), 0.2))
    f = sample_field(Composite(parts), DOMAIN)
    total = sum(sample_field(p, DOMAIN).u for p in parts)
    assert np.allclose(f.u, total)


def test_texture_range_and_determinism():
    a = band_limited_texture(9, (32, 40))
    assert a.min() == pytest.approx(0.1) and a.max() == pytest.approx(0.9)
    assert np.array_equal(a, band_limited_texture(9, (32, 40)))
    assert not np.array_equal(a, band_limited_texture(10, (32, 40)))


def test_texture_is_band_limited():
    a = band_limited_texture(2, (128, 128))
    spec = np.abs(np.fft.rfft2(a - a.mean())) ** 2
    fy = np.abs(np.fft.fftfreq(128))[:, None] * 2
    fx = np.fft.rfftfreq(128)[None, :] * 2
    high = np.hypot(fx, fy) > 0.5
    assert spec[high].sum() < 1e-6 * spec.sum()


def test_zero_carrier_gives_identical_frames():
    pr = render_pair(1, Translation(0, 0), DOMAIN)
    assert np.allclose(pr.prev.pixels, pr.next.pixels, atol=1e-12)


def test_integer_translation_is_a_wrapped_shift():
    pr = render_pair(1, Translation(3, 1), DOMAIN)
    shifted = np.roll(pr.prev.pixels, (1, 3), axis=(0, 1))
    np.testing.assert_allclose(pr.next.pixels, shifted, atol=1e-12)


def test_same_seed_bit_identical():
    a = render_pair(5, Rankine((30, 30), 8, 0.05), DOMAIN)
    b = render_pair(5, Rankine((30, 30), 8, 0.05), DOMAIN)
    assert np.array_equal(a.next.pixels, b.next.pixels)
    assert np.array_equal(a.truth.u, b.truth.u)


def test_sequence_layout_and_files(tmp_path):
    seq = render_sequence(3, Translation(1, 0), 3, DOMAIN)
    assert [p[0].channel for p in seq] == [Channel.CH3] * 3
    assert seq[1][1].timestamp - seq[0][1].timestamp == seq[2][1].timestamp - seq[1][1].timestamp
    write_sequence(seq, tmp_path / "c3", tmp_path / "c4")
    files = sorted((tmp_path / "c4").glob("*.png"))
    assert len(files) == 3
    f = load_frame(files[1], files[1].with_suffix(".json"))
    assert f.channel == Channel.CH4 and f.timestamp == seq[1][1].timestamp
    np.testing.assert_allclose(f.pixels, seq[1][1].pixels, atol=1e-5)
