"""Clairvoyant optimal controls for one episode, as a linear program.

Because the unforced component ``D`` of the PCNN does not depend on the
controls, it can be rolled out up front. Substituting the measured
temperature ``T_k = D_k + E_k + N_k`` into the accumulator update gives the
affine recursion::

    E_{k+1} = (1 - b - c) E_k + g u_k + w_k,
    w_k     = -(b + c)(D_k + N_k) + b T_out_k + c T_neigh_k

so every ``T_{k+1}`` is affine in ``u_0 .. u_k``. Variables are laid out as
``[u_0..u_{H-1}, epsL_1..epsL_H, epsU_1..epsU_H]``; everything is in degC,
K and kW.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .env import N_LAGS, EnvConfig, ZoneEnv, control_inputs, violation
from .errors import NumericalError
from .pcnn import ExogenousSequence, PcnnModel, pcnn_unforced
from .simplex import OPTIMAL, LpProblem, LpSolution, solve_lp

DUALITY_TOL = 1e-8


@dataclass
class OracleInput:
    D: np.ndarray  # D_0 .. D_H, degC
    noise: np.ndarray  # N_0 .. N_H
    t_out: np.ndarray  # k = 0 .. H-1
    t_neigh: np.ndarray
    lower: np.ndarray  # bounds at k + 1 = 1 .. H
    upper: np.ndarray
    E0: float
    lam_tilde: float
    u_low: float
    u_high: float
    g: float  # K per kW per step
    b: float
    c: float

    def __post_init__(self):
        H = self.horizon
        if H < 1:
            raise ValueError("oracle horizon must be at least 1")
        for name, want in (("D", H + 1), ("noise", H + 1), ("t_neigh", H), ("lower", H), ("upper", H)):
            if len(getattr(self, name)) != want:
                raise ValueError(f"{name} has length {len(getattr(self, name))}, expected {want}")
        if self.u_low > self.u_high:
            raise ValueError("u_low > u_high")

    @property
    def horizon(self) -> int:
        return len(self.t_out)

    @property
    def T0(self) -> float:
        return float(self.D[0] + self.E0 + self.noise[0])

    @property
    def lam(self) -> float:
        return abs(self.lam_tilde)


def temperature_map(inp: OracleInput) -> tuple[np.ndarray, np.ndarray]:
    """``(const, G)`` with measured ``T_{k+1} = const[k] + G[k] @ u``."""
    H = inp.horizon
    rho = 1.0 - inp.b - inp.c
    w = -(inp.b + inp.c) * (inp.D[:-1] + inp.noise[:-1]) + inp.b * inp.t_out + inp.c * inp.t_neigh
    e = np.empty(H)
    E = inp.E0
    for k in range(H):
        E = rho * E + w[k]
        e[k] = E
    lag = np.arange(H)[:, None] - np.arange(H)[None, :]
    G = np.where(lag >= 0, inp.g * rho ** np.maximum(lag, 0), 0.0)
    return inp.D[1:] + inp.noise[1:] + e, G


def build_lp(inp: OracleInput) -> LpProblem:
    H = inp.horizon
    const, G = temperature_map(inp)
    I, Z = np.eye(H), np.zeros((H, H))
    A_ub = np.block([[-G, -I, Z], [G, Z, -I]])
    b_ub = np.concatenate([const - inp.lower, inp.upper - const])
    c = np.concatenate([np.full(H, inp.lam_tilde), np.ones(2 * H)])
    lower = np.concatenate([np.full(H, inp.u_low), np.zeros(2 * H)])
    upper = np.concatenate([np.full(H, inp.u_high), np.full(2 * H, np.inf)])
    return LpProblem(c, A_ub, b_ub, lower=lower, upper=upper)


def controls_objective(inp: OracleInput, u) -> float:
    """LP objective of controls ``u`` with the smallest feasible slacks."""
    const, G = temperature_map(inp)
    T = const + G @ np.asarray(u, dtype=float)
    return float(inp.lam_tilde * np.sum(u) + np.sum(violation(T, inp.lower, inp.upper)))


def oracle_input(env: ZoneEnv, lam: float | None = None) -> OracleInput:
    """Oracle data for the episode ``env`` was just reset to."""
    m: PcnnModel = env.model
    ci = control_inputs(env)
    D0 = float(m.to_norm(ci["T0_hist"]))
    exo = ci["exo"]
    H = env.horizon
    ctrl = ExogenousSequence(exo.x[N_LAGS:N_LAGS + H], exo.t_out[N_LAGS:N_LAGS + H],
                             exo.t_neigh[N_LAGS:N_LAGS + H], exo.mode)
    D = m.to_celsius(np.concatenate([[D0], pcnn_unforced(m, D0, ctrl)]))
    lam = env.config.lam if lam is None else lam
    cooling = env.mode == "cooling"
    return OracleInput(D=D, noise=ci["noise"], t_out=ci["t_out"], t_neigh=ci["t_neigh"],
                       lower=ci["lower"], upper=ci["upper"], E0=0.0,
                       lam_tilde=-lam if cooling else lam, u_low=env.u_low, u_high=env.u_high,
                       g=m.gain(env.mode) / m.zone_scale, b=m.b, c=m.c)


@dataclass
class OracleResult:
    controls: np.ndarray
    objective: float  # LP optimum
    replay_return: float  # env return of the same controls
    temperatures: np.ndarray  # measured T_1..T_H from the replay
    violations: float  # K summed over steps
    energy_kwh: float
    solution: LpSolution

    @property
    def comfort_kh(self) -> float:
        return self.violations * 0.25


def solve_oracle(inp: OracleInput) -> LpSolution:
    sol = solve_lp(build_lp(inp))
    if sol.status != OPTIMAL:
        raise NumericalError(f"oracle LP ended with status {sol.status}")
    return sol


def oracle_rollout(trajectory, model: PcnnModel, config: EnvConfig, seed,
                   lam: float | None = None) -> OracleResult:
    """Solve the episode's LP and replay the controls through a fresh environment.

    The replayed return must equal minus the LP objective of the same controls
    to ``DUALITY_TOL``; a mismatch raises :class:`NumericalError`.
    """
    env = ZoneEnv(model, config)
    env.reset(trajectory, seed)
    inp = oracle_input(env, lam)
    sol = solve_oracle(inp)
    u = np.clip(sol.x[:inp.horizon], inp.u_low, inp.u_high)

    replay_cfg = config if lam is None else EnvConfig(lam, config.noise_sigma, config.u_max_heating,
                                                      config.u_max_cooling, config.gamma)
    env = ZoneEnv(model, replay_cfg)
    env.reset(trajectory, seed)
    total, temps, viol = 0.0, [], 0.0
    for uk in u:
        res = env.step(float(uk))
        total += res.reward
        temps.append(res.info["T_measured"])
        viol += res.info["violation"]
    lp_val = controls_objective(inp, u)
    if abs(total + lp_val) > DUALITY_TOL:
        raise NumericalError(f"replayed return {total!r} does not match LP objective {lp_val!r}")
    return OracleResult(u, sol.objective, total, np.array(temps), viol,
                        float(np.sum(np.abs(u)) * 0.25), sol)


def unavoidable_penalty(trajectory, model: PcnnModel, config: EnvConfig, seed) -> float:
    """Smallest achievable summed comfort violation (K) on the episode: the lam = 0 oracle."""
    env = ZoneEnv(model, config)
    env.reset(trajectory, seed)
    sol = solve_oracle(oracle_input(env, lam=0.0))
    return max(0.0, float(sol.objective))

