"""Synthetic zone data, CSV ingestion, trajectory extraction and normalization.

The synthetic generator stands in for measured building data. A hidden
two-node resistance-capacitance model (zone air and envelope mass) is driven
by generated weather, an exogenous neighbouring-room temperature and a
scripted hysteresis thermostat with randomised setpoints and power levels.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np
from scipy.linalg import expm

log = logging.getLogger(__name__)

STEP_MINUTES = 15
STEPS_PER_HOUR = 60 // STEP_MINUTES
STEPS_PER_DAY = 24 * STEPS_PER_HOUR
CSV_HEADER = ["timestamp", "t_zone", "t_neigh", "t_out", "solar", "power", "mode"]
MODES = ("heating", "cooling")
_MODE_CODE = {"heating": "H", "cooling": "C"}
_CODE_MODE = {"H": "heating", "C": "cooling"}
NORM_LOW, NORM_HIGH = 0.1, 0.9
NORMALIZED_FEATURES = ("t_zone", "t_neigh", "t_out", "solar")

# cooling season (month, day) bounds, end exclusive
COOLING_SEASON = ((5, 15), (9, 15))


@dataclass(frozen=True)
class RawRecord:
    timestamp: datetime
    t_zone: float
    t_neigh: float
    t_out: float
    solar: float
    power: float
    mode: str | None  # None when the row could not be parsed

    @property
    def is_gap(self) -> bool:
        vals = (self.t_zone, self.t_neigh, self.t_out, self.solar, self.power)
        return self.mode not in MODES or not all(math.isfinite(v) for v in vals)


@dataclass
class RecordFrame:
    """Columnar view of a record stream; what the numerical code works on."""

    timestamps: np.ndarray  # datetime64[m]
    t_zone: np.ndarray
    t_neigh: np.ndarray
    t_out: np.ndarray
    solar: np.ndarray
    power: np.ndarray
    cooling: np.ndarray  # bool; True in cooling mode
    valid: np.ndarray  # bool; False for rows that were unparsable

    def __len__(self):
        return len(self.timestamps)

    def __getitem__(self, sl: slice) -> RecordFrame:
        return RecordFrame(*(getattr(self, f)[sl] for f in self.__dataclass_fields__))

    @classmethod
    def from_records(cls, records: list[RawRecord]) -> RecordFrame:
        ts = np.array([np.datetime64(r.timestamp.replace(tzinfo=None), "m") for r in records],
                      dtype="datetime64[m]")
        col = lambda name: np.array([getattr(r, name) for r in records], dtype=float)
        return cls(ts, col("t_zone"), col("t_neigh"), col("t_out"), col("solar"), col("power"),
                   np.array([r.mode == "cooling" for r in records], dtype=bool),
                   np.array([not r.is_gap for r in records], dtype=bool))

    def to_records(self) -> list[RawRecord]:
        out = []
        for i in range(len(self)):
            ts = self.timestamps[i].astype("datetime64[s]").item().replace(tzinfo=timezone.utc)
            mode = ("cooling" if self.cooling[i] else "heating") if self.valid[i] else None
            out.append(RawRecord(ts, float(self.t_zone[i]), float(self.t_neigh[i]), float(self.t_out[i]),
                                 float(self.solar[i]), float(self.power[i]), mode))
        return out


def as_frame(records) -> RecordFrame:
    return records if isinstance(records, RecordFrame) else RecordFrame.from_records(records)


@dataclass
class Trajectory:
    """Gap-free window of the record stream with constant mode."""

    frame: RecordFrame
    start: int  # index of the first row in the source stream

    def __len__(self):
        return len(self.frame)

    @property
    def mode(self) -> str:
        return "cooling" if self.frame.cooling[0] else "heating"

    @property
    def records(self) -> list[RawRecord]:
        return self.frame.to_records()


@dataclass
class DatasetSplit:
    train: list[Trajectory]
    validation: list[Trajectory]


def time_features(timestamps: np.ndarray) -> np.ndarray:
    """Columns: sin/cos time of day, sin/cos month of year, day of week / 6 (Monday = 0)."""
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    minute_of_day = (ts - ts.astype("datetime64[D]")).astype(np.int64)
    month = (ts.astype("datetime64[M]").astype(np.int64) % 12)
    dow = (ts.astype("datetime64[D]").astype(np.int64) + 3) % 7
    tod = 2 * np.pi * minute_of_day / 1440.0
    mon = 2 * np.pi * month / 12.0
    return np.column_stack([np.sin(tod), np.cos(tod), np.sin(mon), np.cos(mon), dow / 6.0])


def hour_of_day(timestamps) -> np.ndarray:
    ts = np.asarray(timestamps, dtype="datetime64[m]")
    return (ts - ts.astype("datetime64[D]")).astype(np.int64) / 60.0


def _in_cooling_season(ts: np.ndarray) -> np.ndarray:
    day = ts.astype("datetime64[D]")
    month = ts.astype("datetime64[M]").astype(np.int64) % 12 + 1
    dom = (day - ts.astype("datetime64[M]").astype("datetime64[D]")).astype(np.int64) + 1
    key = month * 100 + dom
    (m0, d0), (m1, d1) = COOLING_SEASON
    return (key >= m0 * 100 + d0) & (key < m1 * 100 + d1)


@dataclass(frozen=True)
class GroundTruth:
    """Hidden 2R2C zone model. Units: J/K, K/W, m^2, W."""

    c_zone: float = 4.5e6
    c_mass: float = 2.0e7
    r_zone_mass: float = 1.6e-3
    r_zone_out: float = 1.0 / 15.0
    r_mass_out: float = 1.0 / 20.0
    r_zone_neigh: float = 1.0 / 30.0
    solar_aperture: float = 2.0
    noise_sigma: float = 0.05  # measurement noise on t_zone, degC

    def discretize(self, dt: float = STEP_MINUTES * 60.0):
        """Zero-order-hold matrices for x = [T_zone, T_mass], w = [T_out, T_neigh, solar, power_kW]."""
        cz, cm = self.c_zone, self.c_mass
        gzm, gzo, gmo, gzn = 1 / self.r_zone_mass, 1 / self.r_zone_out, 1 / self.r_mass_out, 1 / self.r_zone_neigh
        a = np.array([[-(gzm + gzo + gzn) / cz, gzm / cz],
                      [gzm / cm, -(gzm + gmo) / cm]])
        b = np.array([[gzo / cz, gzn / cz, self.solar_aperture / cz, 1000.0 / cz],
                      [gmo / cm, 0.0, 0.0, 0.0]])
        m = np.zeros((6, 6))
        m[:2, :2] = a
        m[:2, 2:] = b
        e = expm(m * dt)
        return e[:2, :2], e[:2, 2:]


def _ar1(rng, n, rho, sigma):
    eps = rng.normal(0.0, sigma * np.sqrt(1 - rho * rho), size=n)
    out = np.empty(n)
    out[0] = rng.normal(0.0, sigma)
    for k in range(1, n):
        out[k] = rho * out[k - 1] + eps[k]
    return out


def generate_synthetic_frame(days: int, seed: int, start: str = "2021-06-01",
                             truth: GroundTruth = GroundTruth(), u_max: float = 2.0) -> RecordFrame:
    if days < 3:
        raise ValueError(f"need at least 3 days of data, got {days}")
    rng = np.random.default_rng(seed)
    n = days * STEPS_PER_DAY
    ts = np.datetime64(start, "m") + np.arange(n) * np.timedelta64(STEP_MINUTES, "m")
    hours = hour_of_day(ts)
    doy = (ts.astype("datetime64[D]") - ts.astype("datetime64[Y]").astype("datetime64[D]")).astype(float)

    t_out = (11.0 - 10.0 * np.cos(2 * np.pi * (doy - 15) / 365.0)
             - 5.0 * np.cos(2 * np.pi * (hours - 3) / 24.0)
             + _ar1(rng, n, np.exp(-1.0 / (2 * STEPS_PER_DAY)), 2.5))
    peak = 500.0 + 350.0 * np.cos(2 * np.pi * (doy - 172) / 365.0)
    bell = np.clip(np.sin(np.pi * (hours - 6) / 12.0), 0.0, None)
    bell[(hours < 6) | (hours > 18)] = 0.0
    cloud = 0.2 + 0.8 / (1 + np.exp(-(1.0 + _ar1(rng, n, np.exp(-1.0 / 24), 1.5))))
    solar = peak * bell * cloud
    t_smooth = np.convolve(t_out, np.ones(STEPS_PER_DAY) / STEPS_PER_DAY, mode="same")
    t_neigh = 22.5 + 0.12 * (t_smooth - 11.0) + _ar1(rng, n, 0.98, 0.6)
    cooling = _in_cooling_season(ts)

    from .env import ComfortSchedule  # bounds drive the scripted thermostat
    sched = ComfortSchedule()
    lower, upper = sched.bounds_array(ts, cooling)

    ad, bd = truth.discretize()
    x = np.array([22.5, 22.0])
    t_zone = np.empty(n)
    power = np.zeros(n)
    on = False
    offset = band = level = 0.0
    excite_until = -1
    for k in range(n):
        if k % STEPS_PER_DAY == 0:
            offset = rng.uniform(-1.0, 1.0)
            band = rng.uniform(0.5, 1.5)
            level = rng.uniform(0.8, 1.0) * u_max
        meas = x[0] + rng.normal(0.0, truth.noise_sigma)
        t_zone[k] = meas
        if k % (6 * STEPS_PER_HOUR) == 0 and rng.random() < 0.15:
            excite_until = k + 6 * STEPS_PER_HOUR
        if k < excite_until:
            if k % 2 == 0:
                on = rng.random() < 0.5
            p = rng.uniform(0.2, 1.0) * u_max if on else 0.0
        else:
            if cooling[k]:
                ref = upper[k] + offset
                if meas >= ref:
                    on = True
                elif meas <= ref - band:
                    on = False
            else:
                ref = lower[k] + offset
                if meas <= ref:
                    on = True
                elif meas >= ref + band:
                    on = False
            p = level if on else 0.0
        power[k] = -p if cooling[k] else p
        x = ad @ x + bd @ np.array([t_out[k], t_neigh[k], solar[k], power[k]])

    return RecordFrame(ts, t_zone, t_neigh, t_out, solar, power, cooling, np.ones(n, dtype=bool))


def generate_synthetic(days: int, seed: int, **kwargs) -> list[RawRecord]:
    return generate_synthetic_frame(days, seed, **kwargs).to_records()


def _fmt_ts(ts: np.datetime64) -> str:
    return str(ts.astype("datetime64[s]")) + "Z"


def write_csv(path, records) -> None:
    frame = as_frame(records)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for i in range(len(frame)):
            mode = ("C" if frame.cooling[i] else "H") if frame.valid[i] else ""
            w.writerow([_fmt_ts(frame.timestamps[i]), repr(float(frame.t_zone[i])),
                        repr(float(frame.t_neigh[i])), repr(float(frame.t_out[i])),
                        repr(float(frame.solar[i])), repr(float(frame.power[i])), mode])


def _parse_ts(text: str) -> datetime:
    text = text.strip()
    if text.endswith("Z"):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        ts = ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_float(text: str) -> float:
    try:
        return float(text)
    except ValueError:
        return math.nan


def load_csv(path) -> list[RawRecord]:
    """Read a record CSV.

    Rows with unparsable numeric or mode fields are kept as gap records
    (NaN values, ``mode=None``). Malformed timestamps raise ``ValueError``
    listing every offending line.
    """
    records, bad_ts = [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ValueError(f"{path}: empty file")
        missing = [c for c in CSV_HEADER if c not in header]
        if missing or header != CSV_HEADER:
            raise ValueError(f"{path}: header must be {','.join(CSV_HEADER)}; missing columns: {missing}")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            row = row + [""] * (len(CSV_HEADER) - len(row))
            try:
                ts = _parse_ts(row[0])
            except ValueError:
                bad_ts.append(lineno)
                continue
            t_zone, t_neigh, t_out, solar, power = (_parse_float(v) for v in row[1:6])
            mode = _CODE_MODE.get(row[6].strip())
            rec = RawRecord(ts, t_zone, t_neigh, t_out, solar, power, mode)
            if rec.is_gap:
                log.warning("%s:%d: unparsable fields, row kept as a gap", path, lineno)
            records.append(rec)
    if bad_ts:
        shown = ", ".join(map(str, bad_ts[:20])) + (" ..." if len(bad_ts) > 20 else "")
        raise ValueError(f"{path}: malformed timestamps on lines {shown}")
    return records


def find_gaps(records) -> list[int]:
    """Indices ``i`` such that row ``i`` cannot follow row ``i - 1`` in one trajectory."""
    return [int(i) for i in np.flatnonzero(_breaks(as_frame(records)))]


def _breaks(frame: RecordFrame) -> np.ndarray:
    n = len(frame)
    brk = np.zeros(n, dtype=bool)
    if n == 0:
        return brk
    brk[0] = True
    step = np.diff(frame.timestamps).astype(np.int64) != STEP_MINUTES
    brk[1:] |= step | (frame.cooling[1:] != frame.cooling[:-1])
    brk |= ~frame.valid
    if n > 1:
        brk[1:] |= ~frame.valid[:-1]
    return brk


def extract_trajectories(records, min_len: int = 48, max_len: int = 288,
                         stride: int = STEPS_PER_HOUR) -> list[Trajectory]:
    """All gap-free windows of ``max_len`` rows starting every ``stride`` rows.

    A gap-free run shorter than ``max_len`` but at least ``min_len`` long is
    emitted whole. Runs break at time jumps, invalid rows and mode changes.
    """
    frame = as_frame(records)
    brk = _breaks(frame)
    starts = np.flatnonzero(brk)
    out = []
    for i, s in enumerate(starts):
        if not frame.valid[s]:
            continue
        e = starts[i + 1] if i + 1 < len(starts) else len(frame)
        n = e - s
        if n >= max_len:
            for off in range(0, n - max_len + 1, stride):
                out.append(Trajectory(frame[s + off:s + off + max_len], int(s + off)))
        elif n >= min_len:
            out.append(Trajectory(frame[s:e], int(s)))
    return out


def split_dataset(records, val_fraction: float = 0.2, **extract_kwargs) -> DatasetSplit:
    """Time-based split: the final ``val_fraction`` of the calendar is held out."""
    frame = as_frame(records)
    t0, t1 = frame.timestamps[0], frame.timestamps[-1]
    span = (t1 - t0).astype(np.int64)
    cut = t0 + np.timedelta64(int(round(span * (1 - val_fraction))), "m")
    k = int(np.searchsorted(frame.timestamps, cut))
    train = extract_trajectories(frame[:k], **extract_kwargs)
    val = [Trajectory(t.frame, t.start + k) for t in extract_trajectories(frame[k:], **extract_kwargs)]
    return DatasetSplit(train, val)


@dataclass(frozen=True)
class Normalizer:
    """Per-feature min-max map onto [0.1, 0.9]."""

    bounds: dict  # feature -> (min, max)

    def __post_init__(self):
        for name, (lo, hi) in self.bounds.items():
            if not hi > lo:
                raise ValueError(f"feature {name!r} is constant (min = max = {lo})")

    def scale(self, name: str) -> float:
        lo, hi = self.bounds[name]
        return (NORM_HIGH - NORM_LOW) / (hi - lo)

    def apply(self, name: str, x):
        lo, hi = self.bounds[name]
        return NORM_LOW + (NORM_HIGH - NORM_LOW) * (np.asarray(x, dtype=float) - lo) / (hi - lo)

    def invert(self, name: str, y):
        lo, hi = self.bounds[name]
        return lo + (np.asarray(y, dtype=float) - NORM_LOW) * (hi - lo) / (NORM_HIGH - NORM_LOW)

    def to_dict(self) -> dict:
        return {k: [float(lo), float(hi)] for k, (lo, hi) in self.bounds.items()}

    @classmethod
    def from_dict(cls, d: dict) -> Normalizer:
        return cls({k: (float(v[0]), float(v[1])) for k, v in d.items()})


def fit_normalizer(train: list[Trajectory], features=NORMALIZED_FEATURES) -> Normalizer:
    if not train:
        raise ValueError("cannot fit a normalizer on an empty training set")
    bounds = {}
    for name in features:
        vals = np.concatenate([getattr(t.frame, name) for t in train])
        bounds[name] = (float(vals.min()), float(vals.max()))
    return Normalizer(bounds)
