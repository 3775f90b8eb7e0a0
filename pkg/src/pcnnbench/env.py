"""Zone-temperature control environment around a trained PCNN.

One episode replays a historical trajectory: the first ``N_LAGS`` rows only
fill the autoregressive history, control starts at row ``N_LAGS`` and the
episode ends when the last row of the trajectory is reached.

Observation layout (``OBS_DIM`` = 60), all on normalized scales:

====== =====================================================
0-3    measured zone temp, neighbour temp, outdoor temp, solar
4-51   12 lags of those four signals, newest first (lag 1 at 4-7)
52-55  sin/cos time of day, sin/cos month
56     day of week / 6
57     mode flag (0 heating, 1 cooling)
58-59  current lower and upper comfort bound
====== =====================================================
"""
from __future__ import annotations

import configparser
import csv
import dataclasses
from dataclasses import dataclass
from datetime import datetime

import numpy as np

from .data import STEP_MINUTES, Trajectory, hour_of_day, time_features
from .errors import ConfigError
from .pcnn import PcnnModel, PcnnState, pcnn_step

N_LAGS = 12
N_SIGNALS = 4
OBS_DIM = N_SIGNALS * (1 + N_LAGS) + 5 + 1 + 2
DT_HOURS = STEP_MINUTES / 60.0


@dataclass(frozen=True)
class ComfortSchedule:
    night_lower: float = 23.0
    night_upper: float = 24.0
    day_heating_lower: float = 21.0
    day_cooling_upper: float = 26.0
    day_start: float = 8.0
    day_end: float = 20.0

    def bounds_at(self, timestamp, mode: str) -> tuple[float, float]:
        if isinstance(timestamp, datetime):
            hour = timestamp.hour + timestamp.minute / 60.0
        else:
            hour = float(hour_of_day(np.array([timestamp], dtype="datetime64[m]"))[0])
        if self.day_start <= hour < self.day_end:
            if mode == "cooling":
                return self.night_lower, self.day_cooling_upper
            return self.day_heating_lower, self.night_upper
        return self.night_lower, self.night_upper

    def bounds_array(self, timestamps, cooling) -> tuple[np.ndarray, np.ndarray]:
        hour = hour_of_day(timestamps)
        day = (hour >= self.day_start) & (hour < self.day_end)
        cooling = np.broadcast_to(np.asarray(cooling, dtype=bool), hour.shape)
        lower = np.where(day & ~cooling, self.day_heating_lower, self.night_lower)
        upper = np.where(day & cooling, self.day_cooling_upper, self.night_upper)
        return lower, upper


@dataclass
class EnvConfig:
    lam: float = 0.5  # kW^-1 K: 1 kW costs the same as 0.5 K of violation
    noise_sigma: float = 0.1  # degC
    u_max_heating: float = 2.0
    u_max_cooling: float = 2.0
    gamma: float = 0.95

    def __post_init__(self):
        if self.lam < 0:
            raise ConfigError("lam must be >= 0")
        if self.noise_sigma < 0:
            raise ConfigError("noise_sigma must be >= 0")
        if self.u_max_heating < 0 or self.u_max_cooling < 0:
            raise ConfigError("power limits must be >= 0")
        if not 0 < self.gamma < 1:
            raise ConfigError("gamma must lie in (0, 1)")

    def action_bounds(self, mode: str) -> tuple[float, float]:
        if mode == "cooling":
            return -self.u_max_cooling, 0.0
        return 0.0, self.u_max_heating


def reward(T_measured: float, L: float, U: float, u: float, lam: float) -> float:
    return -max(L - T_measured, 0.0) - max(T_measured - U, 0.0) - lam * abs(u)


def violation(T, L, U):
    return np.maximum(L - T, 0.0) + np.maximum(T - U, 0.0)


def noise_sequence(n: int, sigma: float, seed) -> np.ndarray:
    """The measurement-noise stream of one episode; shared with the oracle."""
    rng = np.random.default_rng(seed)
    return rng.normal(0.0, 1.0, size=n) * sigma


def episode_seed(base_seed: int, index: int) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(base_seed), int(index)])


@dataclass
class StepResult:
    observation: np.ndarray
    reward: float
    done: bool
    info: dict


class ZoneEnv:
    """Episode state over one trajectory. Single-threaded; one instance per episode stream."""

    def __init__(self, model: PcnnModel, config: EnvConfig, schedule: ComfortSchedule = ComfortSchedule()):
        self.model = model
        self.config = config
        self.schedule = schedule
        self.trajectory = None
        self.done = True

    @property
    def horizon(self) -> int:
        return len(self.trajectory) - 1 - N_LAGS

    def reset(self, trajectory: Trajectory, seed) -> np.ndarray:
        n = len(trajectory)
        if n < N_LAGS + 2:
            raise ValueError(f"trajectory of {n} rows is too short for {N_LAGS} lags")
        m = self.model
        fr = trajectory.frame
        self.trajectory = trajectory
        self.mode = trajectory.mode
        self.u_low, self.u_high = self.config.action_bounds(self.mode)
        self.exo = m.exogenous(fr)
        self.exo_steps = self.exo.steps()
        self.noise = noise_sequence(n, self.config.noise_sigma, seed)
        self.lower, self.upper = self.schedule.bounds_array(fr.timestamps, fr.cooling)
        self.time_feats = time_features(fr.timestamps)
        nz = m.normalizer
        self._neigh_n = nz.apply("t_neigh", fr.t_neigh)
        self._out_n = nz.apply("t_out", fr.t_out)
        self._solar_n = nz.apply("solar", fr.solar)
        self._bounds_n = (m.to_norm(self.lower), m.to_norm(self.upper))
        self.measured = np.full(n, np.nan)
        self.measured[:N_LAGS + 1] = fr.t_zone[:N_LAGS + 1] + self.noise[:N_LAGS + 1]
        self.k = N_LAGS
        self.state = PcnnState(float(m.to_norm(fr.t_zone[N_LAGS])), 0.0)
        self.done = False
        return self.observation()

    def observation(self) -> np.ndarray:
        k = self.k
        m = self.model
        idx = np.arange(k, k - N_LAGS - 1, -1)
        sig = np.column_stack([m.normalizer.apply("t_zone", self.measured[idx]), self._neigh_n[idx],
                               self._out_n[idx], self._solar_n[idx]])
        return np.concatenate([sig.ravel(), self.time_feats[k],
                               [1.0 if self.mode == "cooling" else 0.0,
                                self._bounds_n[0][k], self._bounds_n[1][k]]])

    def clip_action(self, u: float) -> float:
        return float(min(max(u, self.u_low), self.u_high))

    @property
    def measured_T(self) -> float:
        return float(self.measured[self.k])

    @property
    def bounds(self) -> tuple[float, float]:
        return float(self.lower[self.k]), float(self.upper[self.k])

    def step(self, u: float) -> StepResult:
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset()")
        u = self.clip_action(u)
        k = self.k
        m = self.model
        # measured temperature on the model scale; exactly state.T when the noise is zero
        fb = self.state.T + float(self.noise[k]) * m.zone_scale
        self.state = pcnn_step(m, self.state, self.exo_steps[k], u, feedback_T=fb)
        self.k = k + 1
        T_true = float(m.to_celsius(self.state.T))
        T_meas = T_true + self.noise[k + 1]
        self.measured[k + 1] = T_meas
        L, U = float(self.lower[k + 1]), float(self.upper[k + 1])
        r = reward(T_meas, L, U, u, self.config.lam)
        self.done = self.k == len(self.trajectory) - 1
        info = {"T_true": T_true, "T_measured": T_meas, "L": L, "U": U, "u": u,
                "violation": float(violation(T_meas, L, U)), "energy_kwh": abs(u) * DT_HOURS,
                "D": self.state.D, "E": self.state.E}
        return StepResult(self.observation(), r, self.done, info)


EPISODE_LOG_FIELDS = ("step", "T_true", "T_measured", "L", "U", "u", "reward", "D", "E")


def write_episode_log(path, results: list[StepResult]) -> None:
    """One CSV row per step of an episode, from the ``StepResult`` stream."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPISODE_LOG_FIELDS)
        for i, r in enumerate(results):
            inf = r.info
            w.writerow([i, *(repr(float(v)) for v in (inf["T_true"], inf["T_measured"], inf["L"], inf["U"],
                                                     inf["u"], r.reward, inf["D"], inf["E"]))])


def control_inputs(env: ZoneEnv) -> dict:
    """Everything the oracle needs about the episode the env was reset to, in degC."""
    fr = env.trajectory.frame
    return {
        "T0_hist": float(fr.t_zone[N_LAGS]),
        "t_out": fr.t_out[N_LAGS:-1].copy(),
        "t_neigh": fr.t_neigh[N_LAGS:-1].copy(),
        "noise": env.noise[N_LAGS:].copy(),
        "lower": env.lower[N_LAGS + 1:].copy(),
        "upper": env.upper[N_LAGS + 1:].copy(),
        "exo": env.exo,
    }


def load_config_file(path, section_types: dict) -> dict:
    """Parse a ``key = value`` text file into typed values.

    ``section_types`` maps each accepted key to a converter. Unknown keys and
    unparsable values raise :class:`ConfigError`.
    """
    parser = configparser.ConfigParser(inline_comment_prefixes=("#",))
    parser.optionxform = str
    try:
        with open(path) as fh:
            parser.read_string("[run]\n" + fh.read())
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    out = {}
    for key, text in parser["run"].items():
        if key not in section_types:
            raise ConfigError(f"{path}: unknown key {key!r}")
        try:
            out[key] = section_types[key](text)
        except ValueError as exc:
            raise ConfigError(f"{path}: bad value for {key}: {text!r}") from exc
    return out


def dataclass_types(cls) -> dict:
    conv = {"float": float, "int": int, "str": str, "bool": lambda s: s.strip().lower() in ("1", "true", "yes")}
    return {f.name: conv.get(f.type if isinstance(f.type, str) else f.type.__name__, str)
            for f in dataclasses.fields(cls)}
