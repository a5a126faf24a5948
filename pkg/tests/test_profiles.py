import numpy as np
import pytest

from esdroop.profiles import (
    BUILTIN, TimeSeriesProfile, builtin_profile, load_1, read_profile_csv, resolve_profile, solar_highvar,
    solar_smooth, write_profile_csv,
)


def test_builtins_cover_a_day():
    for name in BUILTIN:
        p = builtin_profile(name)
        assert p.duration == pytest.approx(86400.0)
        assert np.all(p.samples >= 0)


def test_solar_shape():
    s = solar_smooth().samples
    h = np.arange(len(s)) * 30 / 3600
    assert np.all(s[(h < 6) | (h > 19)] == 0)
    assert s.max() <= 1.0
    # two midday dips
    assert s[h == 10.0][0] < 0.5 * s[np.isclose(h, 9.5)][0]
    assert s[h == 12.0][0] < 0.5 * s[np.isclose(h, 11.5)][0]


def test_highvar_is_seeded_and_close_in_energy():
    a, b, c = solar_highvar(0).samples, solar_highvar(0).samples, solar_highvar(1).samples
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    smooth = solar_smooth().samples
    assert abs(a.sum() / smooth.sum() - 1) < 0.15
    assert np.std(np.diff(a)) > 2 * np.std(np.diff(smooth))


def test_load_flat_at_night_and_end():
    s = load_1().samples
    h = np.arange(len(s)) * 30 / 3600
    assert np.ptp(s[(h >= 1) & (h <= 4)]) == 0
    assert np.ptp(s[h >= 23]) == 0


def test_csv_round_trip(tmp_path):
    p = solar_highvar(3)
    write_profile_csv(p, tmp_path / "x.csv")
    q = read_profile_csv(tmp_path / "x.csv")
    assert np.allclose(q.samples, p.samples, rtol=1e-8)
    assert (tmp_path / "x.csv").read_text().startswith("index,multiplier\n")


def test_csv_errors(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("i,m\n0,1\n")
    with pytest.raises(ValueError, match="header"):
        read_profile_csv(bad)
    gap = tmp_path / "gap.csv"
    gap.write_text("index,multiplier\n0,1\n2,1\n")
    with pytest.raises(ValueError, match="gaps"):
        read_profile_csv(gap)
    with pytest.raises(ValueError):
        TimeSeriesProfile("neg", 30.0, [1.0, -0.1])


def test_resolve_prefers_directory(tmp_path):
    write_profile_csv(TimeSeriesProfile("load_1", 30.0, np.full(2880, 0.7)), tmp_path / "load_1.csv")
    assert resolve_profile("load_1", profiles_dir=tmp_path).samples[0] == 0.7
    assert resolve_profile("load_1").samples[0] == pytest.approx(0.46)
    with pytest.raises(KeyError):
        resolve_profile("nope")


def test_interpolation_and_resample():
    p = TimeSeriesProfile("r", 60.0, [0.0, 1.0, 1.0])
    assert p.at(30.0) == pytest.approx(0.5)
    assert np.allclose(p.resample(30.0, 180.0), [0, 0.5, 1, 1, 1, 1])
    with pytest.raises(ValueError):
        p.resample(30.0, 3600.0)
