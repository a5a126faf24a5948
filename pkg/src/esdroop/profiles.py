"""Time-series multiplier profiles and the bundled synthetic day shapes."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

import numpy as np

DAY = 86400.0
BUILTIN = ("solar_smooth", "solar_highvar", "load_1", "load_2", "flat", "zero")


@dataclass(frozen=True, eq=False)
class TimeSeriesProfile:
    name: str
    dt: float
    samples: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.samples, dtype=float)
        if s.ndim != 1 or s.size == 0:
            raise ValueError(f"profile {self.name!r}: need a non-empty 1-D sample list")
        if np.any(~np.isfinite(s)) or np.any(s < 0):
            raise ValueError(f"profile {self.name!r}: samples must be finite and non-negative")
        if not self.dt > 0:
            raise ValueError(f"profile {self.name!r}: dt must be > 0")
        object.__setattr__(self, "samples", s)

    @property
    def duration(self) -> float:
        return self.dt * len(self.samples)

    def at(self, t) -> np.ndarray | float:
        """Linear interpolation; the last sample is held past the end."""
        grid = np.arange(len(self.samples)) * self.dt
        out = np.interp(t, grid, self.samples)
        return float(out) if np.ndim(out) == 0 else out

    def resample(self, dt: float, horizon: float) -> np.ndarray:
        n = int(round(horizon / dt))
        if self.duration + 1e-9 < horizon - self.dt:
            raise ValueError(
                f"profile {self.name!r} covers {self.duration / 3600:.2f} h, horizon is {horizon / 3600:.2f} h"
            )
        return np.asarray(self.at(np.arange(n) * dt))


def read_profile_csv(path: str | Path, dt: float = 30.0, name: str | None = None) -> TimeSeriesProfile:
    """Read a ``index,multiplier`` CSV; rows are sorted by index."""
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or [f.strip() for f in reader.fieldnames] != ["index", "multiplier"]:
            raise ValueError(f"{path}: header must be 'index,multiplier'")
        rows = sorted((int(r["index"]), float(r["multiplier"])) for r in reader)
    idx = [i for i, _ in rows]
    if idx != list(range(len(idx))):
        raise ValueError(f"{path}: indices must run 0..n-1 without gaps")
    return TimeSeriesProfile(name or path.stem, dt, np.array([m for _, m in rows]))


def profile_csv_text(profile: TimeSeriesProfile) -> str:
    buf = io.StringIO()
    buf.write("index,multiplier\n")
    for i, m in enumerate(profile.samples):
        buf.write(f"{i},{m:.9g}\n")
    return buf.getvalue()


def write_profile_csv(profile: TimeSeriesProfile, path: str | Path) -> None:
    Path(path).write_text(profile_csv_text(profile))


# --- synthetic day shapes ---------------------------------------------------

def _hours(dt: float) -> np.ndarray:
    return np.arange(int(round(DAY / dt))) * dt / 3600.0


def _piecewise(hours: np.ndarray, knots: list[tuple[float, float]]) -> np.ndarray:
    h, v = zip(*knots)
    return np.interp(hours, h, v)


def _clear_sky(h: np.ndarray) -> np.ndarray:
    sun = np.clip(np.sin(np.pi * (h - 6.0) / 13.0), 0.0, None) ** 1.5
    sun[(h < 6.0) | (h > 19.0)] = 0.0
    return sun


def solar_smooth(dt: float = 30.0) -> TimeSeriesProfile:
    """Clear-sky bell from 6 h to 19 h with two short cloud dips at 10 h and 12 h."""
    h = _hours(dt)
    sun = _clear_sky(h)
    for centre in (10.0, 12.0):
        # 20-minute dip to ~35% with 5-minute ramps
        depth = _piecewise(h, [(centre - 0.25, 0.0), (centre - 1 / 6, 0.65),
                               (centre + 1 / 6, 0.65), (centre + 0.25, 0.0)])
        sun = sun * (1.0 - depth)
    return TimeSeriesProfile("solar_smooth", dt, sun)


def solar_highvar(seed: int = 0, dt: float = 30.0) -> TimeSeriesProfile:
    """Clear-sky bell with seeded, bounded, zero-mean multiplicative jitter (+/-35 %).

    The jitter is a 2-minute AR(1) cloud index squashed into [-1, 1], so the
    day's energy stays close to the smooth profile while output swings fast.
    """
    h = _hours(dt)
    rng = np.random.default_rng(seed)
    coarse_t = np.arange(0.0, 24.0 + 1 / 30, 1 / 30)
    state = np.empty(coarse_t.size)
    x = 0.0
    for i in range(coarse_t.size):
        x = 0.7 * x + rng.normal(0.0, 0.7)
        state[i] = x
    jitter = np.tanh(np.interp(h, coarse_t, state))
    jitter -= jitter.mean()
    out = np.clip(_clear_sky(h) * (1.0 + 0.35 * jitter), 0.0, 1.0)
    return TimeSeriesProfile("solar_highvar", dt, out)


def load_1(dt: float = 30.0) -> TimeSeriesProfile:
    """Residential-style shape as a fraction of rated demand; flat from 1 h to 4 h and in the last hour."""
    h = _hours(dt)
    knots = [(0, 0.46), (1, 0.43), (4, 0.43), (6, 0.44), (8, 0.48), (10, 0.50), (13, 0.49),
             (16, 0.50), (17, 0.52), (18.5, 0.60), (21, 0.60), (22, 0.54), (23, 0.50), (24, 0.50)]
    return TimeSeriesProfile("load_1", dt, _piecewise(h, knots))


def load_2(dt: float = 30.0) -> TimeSeriesProfile:
    """Commercial-style shape: day plateau, low nights, flat during the last hour."""
    h = _hours(dt)
    knots = [(0, 0.42), (1, 0.40), (5, 0.40), (7, 0.46), (9, 0.58), (12, 0.60), (16, 0.58), (18, 0.52),
             (20, 0.48), (22, 0.44), (23, 0.42), (24, 0.42)]
    return TimeSeriesProfile("load_2", dt, _piecewise(h, knots))


def builtin_profile(name: str, seed: int = 0, dt: float = 30.0) -> TimeSeriesProfile:
    if name == "solar_smooth":
        return solar_smooth(dt)
    if name == "solar_highvar":
        return solar_highvar(seed, dt)
    if name == "load_1":
        return load_1(dt)
    if name == "load_2":
        return load_2(dt)
    if name == "flat":
        return TimeSeriesProfile("flat", dt, np.ones(int(round(DAY / dt))))
    if name == "zero":
        return TimeSeriesProfile("zero", dt, np.zeros(int(round(DAY / dt))))
    raise KeyError(f"unknown builtin profile {name!r}")


def resolve_profile(name: str, seed: int = 0, profiles_dir: str | Path | None = None,
                    dt: float = 30.0) -> TimeSeriesProfile:
    """Look a profile up by name: a CSV in ``profiles_dir``, a CSV path, or a builtin shape."""
    if profiles_dir is not None:
        cand = Path(profiles_dir) / f"{name}.csv"
        if cand.exists():
            return read_profile_csv(cand, dt, name)
    p = Path(name)
    if p.suffix == ".csv" and p.exists():
        return read_profile_csv(p, dt)
    return builtin_profile(name, seed, dt)
