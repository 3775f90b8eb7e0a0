"""Physically consistent neural network (PCNN) zone-temperature model.

The temperature is split into an unforced part ``D`` propagated by a neural
network and an energy accumulator ``E`` that is linear in the heating/cooling
power and in the losses to the outside and to the neighbouring room::

    D' = D + f(D, x)
    E' = E + g u - b (T - T_out) - c (T - T_neigh)      g = a (heating) or d (cooling)
    T' = D' + E'

Temperatures inside the model are on the normalized zone-temperature scale;
``T_out`` and ``T_neigh`` are mapped onto that same scale so that the loss
terms are physical differences. Power ``u`` is in kW.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .data import Normalizer, Trajectory, fit_normalizer, time_features
from .errors import NumericalError
from .neural import (
    MlpParams, MlpSpec, adam_init, adam_step, mlp_backward, mlp_forward, mlp_forward_cached,
    mlp_init,
)

log = logging.getLogger(__name__)

PHYS_NAMES = ("a", "b", "c", "d")
N_EXO_FEATURES = 6  # solar + 5 time encodings


def softplus(x):
    return np.logaddexp(0.0, x)


def softplus_inv(y):
    return np.log(np.expm1(y))


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


@dataclass(frozen=True)
class PcnnState:
    D: float
    E: float

    @property
    def T(self) -> float:
        return self.D + self.E


@dataclass(frozen=True)
class ExogenousStep:
    x: np.ndarray  # features fed to the unforced network
    t_out: float  # normalized, zone-temperature scale
    t_neigh: float
    mode: str


@dataclass
class ExogenousSequence:
    """Array form of a run of :class:`ExogenousStep`."""

    x: np.ndarray  # (n, N_EXO_FEATURES)
    t_out: np.ndarray
    t_neigh: np.ndarray
    mode: str

    def __len__(self):
        return len(self.t_out)

    def __getitem__(self, k) -> ExogenousStep:
        return ExogenousStep(self.x[k], float(self.t_out[k]), float(self.t_neigh[k]), self.mode)

    def steps(self) -> list[ExogenousStep]:
        return [self[k] for k in range(len(self))]


@dataclass
class PcnnModel:
    f: MlpParams
    raw: np.ndarray  # unconstrained a, b, c, d
    normalizer: Normalizer

    def __post_init__(self):
        self.raw = np.asarray(self.raw, dtype=float)
        if self.f.spec.n_in != 1 + N_EXO_FEATURES or self.f.spec.n_out != 1:
            raise ValueError(f"unforced network must map {1 + N_EXO_FEATURES} inputs to 1 output")

    @property
    def phys(self) -> dict:
        return dict(zip(PHYS_NAMES, softplus(self.raw).tolist()))

    @property
    def a(self) -> float:
        return float(softplus(self.raw[0]))

    @property
    def b(self) -> float:
        return float(softplus(self.raw[1]))

    @property
    def c(self) -> float:
        return float(softplus(self.raw[2]))

    @property
    def d(self) -> float:
        return float(softplus(self.raw[3]))

    def gain(self, mode: str) -> float:
        return self.d if mode == "cooling" else self.a

    @property
    def zone_scale(self) -> float:
        """Normalized units per degC."""
        return self.normalizer.scale("t_zone")

    def to_norm(self, celsius):
        return self.normalizer.apply("t_zone", celsius)

    def to_celsius(self, norm):
        return self.normalizer.invert("t_zone", norm)

    def exogenous(self, frame) -> ExogenousSequence:
        """Exogenous inputs for every row of a trajectory (or record frame)."""
        frame = getattr(frame, "frame", frame)
        x = np.column_stack([self.normalizer.apply("solar", frame.solar), time_features(frame.timestamps)])
        mode = "cooling" if frame.cooling[0] else "heating"
        return ExogenousSequence(x, self.to_norm(frame.t_out), self.to_norm(frame.t_neigh), mode)

    def copy(self) -> PcnnModel:
        return PcnnModel(self.f.copy(), self.raw.copy(), self.normalizer)

    def to_dict(self) -> dict:
        return {"format": "pcnnbench-pcnn-v1", "f": self.f.to_dict(), "raw": self.raw.tolist(),
                "normalizer": self.normalizer.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> PcnnModel:
        return cls(MlpParams.from_dict(d["f"]), np.array(d["raw"], dtype=float),
                   Normalizer.from_dict(d["normalizer"]))


def save_model(path, model: PcnnModel):
    Path(path).write_text(json.dumps(model.to_dict()))


def load_model(path) -> PcnnModel:
    return PcnnModel.from_dict(json.loads(Path(path).read_text()))


def init_model(normalizer: Normalizer, hidden=(32, 32), seed: int = 0,
               init_phys: dict | None = None, activation: str = "relu") -> PcnnModel:
    phys = {"a": 0.02, "b": 0.02, "c": 0.01, "d": 0.02}
    phys.update(init_phys or {})
    spec = MlpSpec((1 + N_EXO_FEATURES, *hidden, 1), activation, "identity")
    f = mlp_init(spec, seed)
    # start from near-zero unforced drift
    f.weights[-1] *= 0.1
    raw = softplus_inv(np.array([phys[k] for k in PHYS_NAMES]))
    return PcnnModel(f, raw, normalizer)


def _check_sign(u: float, mode: str):
    if mode == "cooling" and u > 0:
        raise ValueError(f"positive power {u} kW in cooling mode")
    if mode != "cooling" and u < 0:
        raise ValueError(f"negative power {u} kW in heating mode")


def pcnn_step(model: PcnnModel, state: PcnnState, exo: ExogenousStep, u: float,
              feedback_T: float | None = None) -> PcnnState:
    """Advance one 15-minute step.

    ``feedback_T`` replaces ``state.T`` in the loss terms; the environment
    passes the noisy measured temperature here.
    """
    _check_sign(u, exo.mode)
    t_fb = state.T if feedback_T is None else feedback_T
    if not np.isfinite([state.D, state.E, t_fb, u, exo.t_out, exo.t_neigh]).all() or \
            not np.all(np.isfinite(exo.x)):
        raise NumericalError("non-finite input to pcnn_step")
    inc = mlp_forward(model.f, np.concatenate(([state.D], exo.x)))[0]
    D = state.D + inc
    E = state.E + model.gain(exo.mode) * u - model.b * (t_fb - exo.t_out) - model.c * (t_fb - exo.t_neigh)
    return PcnnState(float(D), float(E))


def pcnn_unforced(model: PcnnModel, D0: float, exo) -> np.ndarray:
    """``D_1 .. D_H`` for the exogenous steps ``0 .. H-1``. Never reads any control."""
    if isinstance(exo, list):
        if not exo:
            raise ValueError("empty exogenous sequence")
        x = np.array([e.x for e in exo])
    else:
        x = exo.x
    if len(x) == 0:
        raise ValueError("empty exogenous sequence")
    out = np.empty(len(x))
    D = float(D0)
    for k in range(len(x)):
        D = D + mlp_forward(model.f, np.concatenate(([D], x[k])))[0]
        if not np.isfinite(D):
            raise NumericalError(f"unforced dynamics diverged at step {k}")
        out[k] = D
    return out


@dataclass
class ConsistencyReport:
    n_checked: int
    violations: list = field(default_factory=list)
    max_slope_error: float = 0.0

    @property
    def ok(self) -> bool:
        return not self.violations


def pcnn_consistency_check(model: PcnnModel, n_random_states: int = 1000, seed: int = 0,
                           tol: float = 1e-12) -> ConsistencyReport:
    """Check on random states that the next temperature moves with slope a (heating) or d (cooling)."""
    rng = np.random.default_rng(seed)
    report = ConsistencyReport(0)
    for i in range(n_random_states):
        state = PcnnState(rng.uniform(0, 1), rng.uniform(-0.3, 0.3))
        for mode in ("heating", "cooling"):
            exo = ExogenousStep(rng.uniform(-1, 1, N_EXO_FEATURES), rng.uniform(-0.5, 1.2),
                                rng.uniform(0, 1), mode)
            g = model.gain(mode)
            du = rng.uniform(0.1, 2.0) * (-1 if mode == "cooling" else 1)
            t0 = pcnn_step(model, state, exo, 0.0).T
            t1 = pcnn_step(model, state, exo, du).T
            slope = (t1 - t0) / du
            err = abs(slope - g) * abs(du) / max(1.0, abs(t0))
            report.max_slope_error = max(report.max_slope_error, err)
            report.n_checked += 1
            wrong_way = (t1 < t0) if mode == "heating" else (t1 > t0)
            if g <= 0 or wrong_way or err > tol:
                report.violations.append((i, mode, slope, g))
    return report


@dataclass
class PcnnTrainConfig:
    epochs: int = 40
    batches_per_epoch: int = 50
    batch_size: int = 64
    horizon: int = 48
    learning_rate: float = 1e-3
    phys_lr_factor: float = 10.0
    hidden: tuple = (32, 32)
    n_val_windows: int = 256


@dataclass
class _Windows:
    D0: np.ndarray
    x: np.ndarray  # (B, H, dx)
    t_out: np.ndarray  # (B, H)
    t_neigh: np.ndarray
    u: np.ndarray
    cooling: np.ndarray  # (B,)
    y: np.ndarray  # (B, H) measured T_1..T_H


def _window_arrays(model: PcnnModel, trajs: list[Trajectory], picks, horizon: int) -> _Windows:
    cache = {}
    rows = []
    for ti, off in picks:
        if ti not in cache:
            t = trajs[ti]
            cache[ti] = (model.exogenous(t), model.to_norm(t.frame.t_zone), t.frame.power)
        exo, tz, p = cache[ti]
        sl = slice(off, off + horizon)
        rows.append((tz[off], exo.x[sl], exo.t_out[sl], exo.t_neigh[sl], p[sl],
                     exo.mode == "cooling", tz[off + 1:off + horizon + 1]))
    cols = list(zip(*rows))
    return _Windows(np.array(cols[0]), np.array(cols[1]), np.array(cols[2]), np.array(cols[3]),
                    np.array(cols[4]), np.array(cols[5]), np.array(cols[6]))


def _sample_picks(rng, trajs, n, horizon):
    picks = []
    for _ in range(n):
        ti = int(rng.integers(len(trajs)))
        off = int(rng.integers(len(trajs[ti]) - horizon))
        picks.append((ti, off))
    return picks


def _rollout_loss(model: PcnnModel, w: _Windows, grad: bool = True):
    """Multi-step MSE over the windows and, optionally, its gradient (BPTT)."""
    B, H = w.t_out.shape
    a, b, c, d = softplus(model.raw)
    g = np.where(w.cooling, d, a)
    D = w.D0.copy()
    E = np.zeros(B)
    caches, Ts = [], []
    preds = np.empty((B, H))
    for k in range(H):
        T = D + E
        out, cache = mlp_forward_cached(model.f, np.column_stack([D, w.x[:, k]]))
        caches.append(cache)
        Ts.append(T)
        D = D + out[:, 0]
        E = E + g * w.u[:, k] - b * (T - w.t_out[:, k]) - c * (T - w.t_neigh[:, k])
        preds[:, k] = D + E
    err = preds - w.y
    loss = float(np.mean(err ** 2))
    if not np.isfinite(loss):
        raise NumericalError("PCNN rollout loss is not finite")
    if not grad:
        return loss, None, None
    dT = 2.0 * err / err.size
    lam_D = np.zeros(B)
    lam_E = np.zeros(B)
    g_raw_eff = np.zeros(4)
    f_grad = None
    for k in range(H - 1, -1, -1):
        lam_D = lam_D + dT[:, k]
        lam_E = lam_E + dT[:, k]
        T = Ts[k]
        heat = ~w.cooling
        g_raw_eff[0] += np.sum(lam_E[heat] * w.u[heat, k])
        g_raw_eff[3] += np.sum(lam_E[~heat] * w.u[~heat, k])
        g_raw_eff[1] -= np.sum(lam_E * (T - w.t_out[:, k]))
        g_raw_eff[2] -= np.sum(lam_E * (T - w.t_neigh[:, k]))
        gf, gin = mlp_backward(model.f, caches[k], lam_D[:, None])
        f_grad = gf if f_grad is None else MlpParams.from_arrays(
            gf.spec, [x + y for x, y in zip(f_grad.arrays(), gf.arrays())])
        lam_T = -(b + c) * lam_E
        lam_D = lam_D + gin[:, 0] + lam_T
        lam_E = lam_E + lam_T
    return loss, f_grad, g_raw_eff * sigmoid(model.raw)


def rollout_mse(model: PcnnModel, trajs: list[Trajectory], horizon: int, n_windows: int = 256,
                seed: int = 0) -> float:
    picks = _sample_picks(np.random.default_rng(seed), trajs, n_windows, horizon)
    return _rollout_loss(model, _window_arrays(model, trajs, picks, horizon), grad=False)[0]


def one_step_mse_celsius(model: PcnnModel, trajs: list[Trajectory]) -> float:
    """Mean squared one-step-ahead error in degC^2, starting each step from the measurement."""
    errs = []
    for t in trajs:
        exo = model.exogenous(t)
        tz = model.to_norm(t.frame.t_zone)
        inp = np.column_stack([tz[:-1], exo.x[:-1]])
        inc = mlp_forward(model.f, inp)[:, 0]
        g = model.gain(exo.mode)
        pred = tz[:-1] + inc + g * t.frame.power[:-1] - model.b * (tz[:-1] - exo.t_out[:-1]) \
            - model.c * (tz[:-1] - exo.t_neigh[:-1])
        errs.append((pred - tz[1:]) / model.zone_scale)
    e = np.concatenate(errs)
    return float(np.mean(e ** 2))


def pcnn_train(dataset: list[Trajectory], config: PcnnTrainConfig, seed: int,
               normalizer: Normalizer | None = None, validation: list[Trajectory] | None = None,
               on_epoch=None) -> PcnnModel:
    """Fit the unforced network and a, b, c, d by truncated BPTT on multi-step rollouts.

    Returns the model with the lowest validation rollout MSE seen, including
    the initial one (so zero epochs returns the initialization).
    """
    if not dataset:
        raise ValueError("empty training set")
    H = config.horizon
    shortest = min(len(t) for t in dataset)
    if H + 1 > shortest:
        raise ValueError(f"horizon {H} too long for shortest trajectory ({shortest} rows)")
    if validation is None:
        order = sorted(range(len(dataset)), key=lambda i: dataset[i].start)
        cut = max(1, int(0.8 * len(order)))
        validation = [dataset[i] for i in order[cut:]] or [dataset[order[-1]]]
        dataset = [dataset[i] for i in order[:cut]]
    validation = [v for v in validation if len(v) > H]
    if not validation:
        raise ValueError("no validation trajectory is long enough for the horizon")

    if normalizer is None:
        normalizer = fit_normalizer(dataset)
    rng = np.random.default_rng(seed)
    model = init_model(normalizer, config.hidden, seed=int(rng.integers(2 ** 31)))
    val_picks = _sample_picks(np.random.default_rng(seed + 1), validation, config.n_val_windows, H)
    val_windows = _window_arrays(model, validation, val_picks, H)
    best_loss = _rollout_loss(model, val_windows, grad=False)[0]
    best = model.copy()
    opt_f = adam_init(model.f, config.learning_rate)
    phys_spec = MlpSpec((4, 1))
    phys_as_params = lambda raw: MlpParams(phys_spec, [raw.reshape(4, 1)], [np.zeros(1)])
    opt_p = adam_init(phys_as_params(model.raw), config.learning_rate * config.phys_lr_factor)

    for epoch in range(config.epochs):
        losses = []
        for _ in range(config.batches_per_epoch):
            picks = _sample_picks(rng, dataset, config.batch_size, H)
            w = _window_arrays(model, dataset, picks, H)
            loss, gf, graw = _rollout_loss(model, w)
            losses.append(loss)
            opt_f, f_new = adam_step(opt_f, model.f, gf)
            opt_p, p_new = adam_step(opt_p, phys_as_params(model.raw),
                                     MlpParams(phys_spec, [graw.reshape(4, 1)], [np.zeros(1)]))
            model = PcnnModel(f_new, p_new.weights[0].ravel(), normalizer)
        val = _rollout_loss(model, val_windows, grad=False)[0]
        if val < best_loss:
            best_loss, best = val, model.copy()
        log.info("pcnn epoch %d train %.3e val %.3e best %.3e", epoch, np.mean(losses), val, best_loss)
        if on_epoch is not None:
            on_epoch(epoch, float(np.mean(losses)), val)
    return best
