"""Controllers for the zone environment: a TD3 agent and two rule-based baselines.

The actor outputs a normalized action ``a`` in [-1, 1] (tanh). It maps
affinely onto the mode's power interval so that ``a = -1`` is off and
``a = 1`` is full power in both seasons; the critics and the replay buffer
only ever see ``a``.
"""
from __future__ import annotations

import copy
import logging
from dataclasses import dataclass, field

import numpy as np

from .env import DT_HOURS, OBS_DIM, ZoneEnv, episode_seed
from .errors import NumericalError
from .neural import MlpParams, MlpSpec, OptimizerState, adam_init, adam_step, mlp_backward, \
    mlp_forward, mlp_forward_cached, mlp_init

log = logging.getLogger(__name__)

STEPS_PER_EPOCH = 5000
N_EVAL_TRAJECTORIES = 50


@dataclass
class Td3Config:
    gamma: float = 0.95
    tau: float = 0.005
    policy_delay: int = 2
    target_noise_sigma: float = 0.2  # normalized action units
    target_noise_clip: float = 0.5
    exploration_sigma: float = 0.1
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    hidden: tuple = (512, 512, 512)
    learning_rate: float = 1e-4
    rectified_adam: bool = False  # plain Adam; True selects RAdam
    warmup_steps: int = 2000  # uniform random actions before the first update
    scale_inputs: bool = True  # standardize observations with statistics of the warmup data
    # quadratic penalty on actor pre-activations beyond +-saturation_bound, so a
    # saturated tanh cannot freeze the policy at "off" or "full power"
    saturation_penalty: float = 1e-3
    saturation_bound: float = 2.5

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if not 0 < self.tau <= 1:
            raise ValueError("tau must lie in (0, 1]")
        if self.policy_delay < 1:
            raise ValueError("policy_delay must be >= 1")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be >= 1")
        if min(self.target_noise_sigma, self.target_noise_clip, self.exploration_sigma) < 0:
            raise ValueError("noise scales must be >= 0")

    def actor_spec(self, obs_dim: int = OBS_DIM) -> MlpSpec:
        return MlpSpec((obs_dim, *self.hidden, 1), "relu", "tanh")

    def critic_spec(self, obs_dim: int = OBS_DIM) -> MlpSpec:
        return MlpSpec((obs_dim + 1, *self.hidden, 1), "relu", "identity")


@dataclass
class Transition:
    obs: np.ndarray
    action: float  # normalized, in [-1, 1]
    reward: float
    next_obs: np.ndarray
    done: bool


@dataclass
class Batch:
    obs: np.ndarray  # (n, obs_dim)
    action: np.ndarray  # (n,)
    reward: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return len(self.reward)


class ReplayBuffer:
    """Ring buffer with uniform sampling. Storage grows by doubling up to ``capacity``."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.obs_dim = obs_dim
        self.inserted = 0
        self._alloc(min(self.capacity, 1024))

    def _alloc(self, n):
        old = getattr(self, "_obs", None)
        obs, nxt = np.zeros((n, self.obs_dim)), np.zeros((n, self.obs_dim))
        act, rew, done = np.zeros(n), np.zeros(n), np.zeros(n, dtype=bool)
        if old is not None:
            m = len(old)
            obs[:m], nxt[:m] = self._obs, self._next
            act[:m], rew[:m], done[:m] = self._act, self._rew, self._done
        self._obs, self._next, self._act, self._rew, self._done = obs, nxt, act, rew, done

    def __len__(self):
        return min(self.inserted, self.capacity)

    def add(self, t: Transition):
        i = self.inserted % self.capacity
        if i >= len(self._obs):
            self._alloc(min(self.capacity, 2 * len(self._obs)))
        self._obs[i] = t.obs
        self._next[i] = t.next_obs
        self._act[i] = t.action
        self._rew[i] = t.reward
        self._done[i] = t.done
        self.inserted += 1

    def indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if len(self) == 0:
            raise ValueError("cannot sample from an empty buffer")
        return rng.integers(0, len(self), size=n)

    def sample(self, n: int, rng: np.random.Generator) -> Batch:
        idx = self.indices(n, rng)
        return Batch(self._obs[idx], self._act[idx], self._rew[idx], self._next[idx], self._done[idx])


def to_power(a, u_low: float, u_high: float):
    """Normalized action -> kW. ``-1`` is off, ``+1`` is full power."""
    full = u_low if u_high <= 0 else u_high
    return (np.asarray(a, dtype=float) + 1.0) * 0.5 * full


def from_power(u, u_low: float, u_high: float):
    full = u_low if u_high <= 0 else u_high
    return np.asarray(u, dtype=float) / full * 2.0 - 1.0


def polyak_update(live: MlpParams, target: MlpParams, tau: float) -> MlpParams:
    if not 0 <= tau <= 1:
        raise ValueError("tau must lie in [0, 1]")
    la, ta = live.arrays(), target.arrays()
    if len(la) != len(ta) or any(x.shape != y.shape for x, y in zip(la, ta)):
        raise ValueError("live and target parameter shapes differ")
    return MlpParams.from_arrays(target.spec, [tau * x + (1.0 - tau) * y for x, y in zip(la, ta)])


@dataclass
class Td3Agent:
    config: Td3Config
    actor: MlpParams
    critic1: MlpParams
    critic2: MlpParams
    actor_target: MlpParams
    critic1_target: MlpParams
    critic2_target: MlpParams
    actor_opt: OptimizerState
    critic1_opt: OptimizerState
    critic2_opt: OptimizerState
    rng: np.random.Generator
    n_updates: int = 0
    # fixed input standardization: networks see (obs - obs_shift) * obs_scale
    obs_shift: np.ndarray | None = None
    obs_scale: np.ndarray | None = None

    def __post_init__(self):
        if self.obs_shift is None:
            self.obs_shift = np.zeros(self.obs_dim)
        if self.obs_scale is None:
            self.obs_scale = np.ones(self.obs_dim)

    @property
    def obs_dim(self) -> int:
        return self.actor.spec.n_in

    def net_input(self, obs) -> np.ndarray:
        return (np.asarray(obs, dtype=float) - self.obs_shift) * self.obs_scale


def fit_obs_scaler(agent: Td3Agent, observations: np.ndarray, min_std: float = 1e-3):
    """Set the input standardization from a sample of raw observations.

    Features with a spread below ``min_std`` (constant flags) are only centred.
    """
    obs = np.asarray(observations, dtype=float)
    std = obs.std(axis=0)
    agent.obs_shift = obs.mean(axis=0)
    agent.obs_scale = np.where(std > min_std, 1.0 / np.maximum(std, min_std), 1.0)


def td3_init(config: Td3Config, seed: int, obs_dim: int = OBS_DIM) -> Td3Agent:
    ss = np.random.SeedSequence(seed)
    s_actor, s_c1, s_c2, s_rng = (int(s.generate_state(1)[0]) for s in ss.spawn(4))
    actor = mlp_init(config.actor_spec(obs_dim), s_actor)
    c1 = mlp_init(config.critic_spec(obs_dim), s_c1)
    c2 = mlp_init(config.critic_spec(obs_dim), s_c2)
    lr, rect = config.learning_rate, config.rectified_adam
    return Td3Agent(config, actor, c1, c2, actor.copy(), c1.copy(), c2.copy(),
                    adam_init(actor, lr, rect), adam_init(c1, lr, rect), adam_init(c2, lr, rect),
                    np.random.default_rng(s_rng))


def actor_action(agent: Td3Agent, obs) -> np.ndarray:
    obs = np.asarray(obs, dtype=float)
    if obs.shape[-1] != agent.obs_dim:
        raise ValueError(f"observation has {obs.shape[-1]} entries, actor expects {agent.obs_dim}")
    return mlp_forward(agent.actor, agent.net_input(obs))[..., 0]


def select_action(agent: Td3Agent, obs, u_low: float, u_high: float, explore: bool = False,
                  rng: np.random.Generator | None = None) -> tuple[float, float]:
    """Returns ``(u_kw, a_normalized)``."""
    a = float(actor_action(agent, obs))
    if explore:
        rng = agent.rng if rng is None else rng
        a = float(np.clip(a + rng.normal(0.0, agent.config.exploration_sigma), -1.0, 1.0))
    u = float(np.clip(to_power(a, u_low, u_high), u_low, u_high))
    return u, a


def _q(params: MlpParams, obs, a) -> np.ndarray:
    return mlp_forward(params, np.column_stack([obs, a]))[:, 0]


def td3_target(agent: Td3Agent, batch: Batch, noise: np.ndarray) -> np.ndarray:
    """Critic regression target for a batch, given the raw (unclipped) smoothing noise."""
    cfg = agent.config
    clip = cfg.target_noise_clip
    s_next = agent.net_input(batch.next_obs)
    a_next = mlp_forward(agent.actor_target, s_next)[:, 0]
    a_next = np.clip(a_next + np.clip(noise, -clip, clip), -1.0, 1.0)
    q1 = _q(agent.critic1_target, s_next, a_next)
    q2 = _q(agent.critic2_target, s_next, a_next)
    not_done = 1.0 - batch.done.astype(float)
    return batch.reward + cfg.gamma * not_done * np.minimum(q1, q2)


def _critic_step(params, opt, x, y):
    q, outs = mlp_forward_cached(params, x)
    err = q[:, 0] - y
    loss = float(np.mean(err ** 2))
    grads, _ = mlp_backward(params, outs, (2.0 / len(y)) * err[:, None])
    opt, params = adam_step(opt, params, grads)
    return params, opt, loss


def _actor_gradients(agent: Td3Agent, s: np.ndarray):
    """Gradient of ``-mean Q1(s, tanh(z(s)))`` plus the saturation penalty on ``z``."""
    cfg = agent.config
    n = len(s)
    spec = agent.actor.spec
    pre = MlpParams(MlpSpec(spec.layer_sizes, spec.hidden_activation, "identity"),
                    agent.actor.weights, agent.actor.biases)
    z, z_outs = mlp_forward_cached(pre, s)
    a = np.tanh(z)
    q, q_outs = mlp_forward_cached(agent.critic1, np.column_stack([s, a[:, 0]]))
    _, dq_dx = mlp_backward(agent.critic1, q_outs, np.full((n, 1), -1.0 / n))
    excess = np.sign(z) * np.maximum(np.abs(z) - cfg.saturation_bound, 0.0)
    dz = dq_dx[:, -1:] * (1.0 - a * a) + (2.0 * cfg.saturation_penalty / n) * excess
    g, _ = mlp_backward(pre, z_outs, dz)
    return MlpParams(spec, g.weights, g.biases), q[:, 0]


def td3_update(agent: Td3Agent, batch: Batch, noise: np.ndarray | None = None) -> dict:
    """One TD3 gradient step in place. ``noise`` overrides the sampled target-smoothing noise.

    Returns the critic losses, the actor objective on delayed steps and the
    regression targets ``y`` used for the critics.
    """
    cfg = agent.config
    n = len(batch)
    if n < 1:
        raise ValueError("empty batch")
    if noise is None:
        noise = agent.rng.normal(0.0, cfg.target_noise_sigma, size=n)
    y = td3_target(agent, batch, noise)
    s = agent.net_input(batch.obs)
    x = np.column_stack([s, batch.action])
    agent.critic1, agent.critic1_opt, l1 = _critic_step(agent.critic1, agent.critic1_opt, x, y)
    agent.critic2, agent.critic2_opt, l2 = _critic_step(agent.critic2, agent.critic2_opt, x, y)
    agent.n_updates += 1
    losses = {"critic1": l1, "critic2": l2, "y": y}
    if not np.isfinite([l1, l2]).all():
        raise NumericalError(f"non-finite critic loss after update {agent.n_updates}: {losses}")

    if agent.n_updates % cfg.policy_delay == 0:
        grads, q = _actor_gradients(agent, s)
        agent.actor_opt, agent.actor = adam_step(agent.actor_opt, agent.actor, grads)
        losses["actor"] = float(-np.mean(q))
        agent.actor_target = polyak_update(agent.actor, agent.actor_target, cfg.tau)
        agent.critic1_target = polyak_update(agent.critic1, agent.critic1_target, cfg.tau)
        agent.critic2_target = polyak_update(agent.critic2, agent.critic2_target, cfg.tau)
    return losses


# --- rule-based baselines -------------------------------------------------------

BASELINE1_OFFSET = 0.5  # degC inside the bound
BASELINE2_BAND = 1.0


@dataclass
class HysteresisState:
    currently_on: bool = False


def _full_power(mode: str, u_low: float, u_high: float) -> float:
    return u_low if mode == "cooling" else u_high


def baseline1_act(T: float, L: float, U: float, mode: str, state: HysteresisState,
                  u_low: float = -2.0, u_high: float = 2.0) -> float:
    """Bang-bang tracking of a reference 0.5 degC inside the active bound.

    Heating runs while ``T < L + 0.5`` and stops as soon as the reference is
    met; cooling runs while ``T > U - 0.5``.
    """
    if L >= U:
        raise ValueError(f"lower bound {L} must be below upper bound {U}")
    if mode == "cooling":
        state.currently_on = T > U - BASELINE1_OFFSET
    else:
        state.currently_on = T < L + BASELINE1_OFFSET
    return _full_power(mode, u_low, u_high) if state.currently_on else 0.0


def baseline2_act(T: float, L: float, U: float, mode: str, state: HysteresisState,
                  u_low: float = -2.0, u_high: float = 2.0) -> float:
    """Full power from the bound until one degree has been gained (or lost, when cooling)."""
    if L >= U:
        raise ValueError(f"lower bound {L} must be below upper bound {U}")
    if mode == "cooling":
        if state.currently_on and T <= U - BASELINE2_BAND:
            state.currently_on = False
        elif not state.currently_on and T >= U:
            state.currently_on = True
    else:
        if state.currently_on and T >= L + BASELINE2_BAND:
            state.currently_on = False
        elif not state.currently_on and T <= L:
            state.currently_on = True
    return _full_power(mode, u_low, u_high) if state.currently_on else 0.0


# --- controllers and episodes -----------------------------------------------------

class RuleController:
    def __init__(self, rule):
        self.rule = rule
        self.state = HysteresisState()

    def reset(self):
        self.state = HysteresisState()

    def act(self, env: ZoneEnv, obs) -> float:
        L, U = env.bounds
        return self.rule(env.measured_T, L, U, env.mode, self.state, env.u_low, env.u_high)


class PolicyController:
    def __init__(self, agent: Td3Agent):
        self.agent = agent

    def reset(self):
        pass

    def act(self, env: ZoneEnv, obs) -> float:
        return select_action(self.agent, obs, env.u_low, env.u_high, explore=False)[0]


def baseline_controller(name: str) -> RuleController:
    rules = {"baseline1": baseline1_act, "baseline2": baseline2_act}
    if name not in rules:
        raise ValueError(f"unknown baseline {name!r}")
    return RuleController(rules[name])


@dataclass
class EpisodeStats:
    reward: float
    energy_kwh: float
    violation: float  # K summed over steps
    steps: int
    controls: np.ndarray = field(repr=False, default=None)

    @property
    def comfort_kh(self) -> float:
        return self.violation * DT_HOURS


def run_episode(env: ZoneEnv, controller, trajectory, seed) -> EpisodeStats:
    obs = env.reset(trajectory, seed)
    controller.reset()
    total = energy = viol = 0.0
    controls = []
    done = False
    while not done:
        res = env.step(controller.act(env, obs))
        obs, done = res.observation, res.done
        total += res.reward
        energy += res.info["energy_kwh"]
        viol += res.info["violation"]
        controls.append(res.info["u"])
    return EpisodeStats(total, energy, viol, len(controls), np.array(controls))


# --- training --------------------------------------------------------------------

@dataclass
class EpochLog:
    epoch: int
    mean_reward: float
    median_reward: float
    min_reward: float
    max_reward: float
    energy_kwh: float  # mean per trajectory
    comfort_kh: float

    CSV_FIELDS = ("epoch", "mean_reward", "median_reward", "min_reward", "max_reward",
                  "energy_kwh", "comfort_kh")

    def row(self) -> list:
        return [getattr(self, f) for f in self.CSV_FIELDS]


@dataclass
class TrainResult:
    log: list[EpochLog]
    best_actor: MlpParams
    best_epoch: int
    best_reward: float
    agent: Td3Agent


def evaluate_policy(agent: Td3Agent, env: ZoneEnv, trajectories, eval_seed: int) -> list[EpisodeStats]:
    ctrl = PolicyController(agent)
    return [run_episode(env, ctrl, tr, episode_seed(eval_seed, i)) for i, tr in enumerate(trajectories)]


def _epoch_log(epoch: int, stats: list[EpisodeStats]) -> EpochLog:
    r = np.array([s.reward for s in stats])
    return EpochLog(epoch, float(r.mean()), float(np.median(r)), float(r.min()), float(r.max()),
                    float(np.mean([s.energy_kwh for s in stats])),
                    float(np.mean([s.comfort_kh for s in stats])))


def train_loop(agent: Td3Agent, env: ZoneEnv, train_trajectories, eval_trajectories, epochs: int,
               seed: int, steps_per_epoch: int = STEPS_PER_EPOCH, on_epoch=None,
               eval_seed: int | None = None) -> TrainResult:
    """Train ``agent`` in place for ``epochs`` x ``steps_per_epoch`` environment steps.

    Episodes draw a random training trajectory and noise seed; an episode cut
    by an epoch boundary simply continues into the next epoch. After each
    epoch the deterministic policy is evaluated on ``eval_trajectories`` and
    the actor with the best mean reward is kept. Gradient updates start once
    ``max(warmup_steps, batch_size)`` transitions are stored; the input
    standardization is fitted on those transitions and frozen. Evaluation
    noise comes from ``eval_seed`` (derived from ``seed`` when omitted), so
    runs sharing it are scored on identical episodes.
    """
    if not train_trajectories:
        raise ValueError("training trajectory pool is empty")
    cfg = agent.config
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 1]))
    eval_seed = int(seed) + 1_000_003 if eval_seed is None else int(eval_seed)
    buffer = ReplayBuffer(cfg.buffer_capacity, agent.obs_dim)
    eval_env = ZoneEnv(env.model, env.config, env.schedule)
    history, best, best_epoch, best_reward = [], agent.actor.copy(), 0, -np.inf
    obs, done, step = None, True, 0
    first_update = max(cfg.warmup_steps, cfg.batch_size)
    for epoch in range(1, epochs + 1):
        for _ in range(steps_per_epoch):
            if done:
                tr = train_trajectories[int(rng.integers(len(train_trajectories)))]
                obs = env.reset(tr, int(rng.integers(2 ** 63 - 1)))
            if step < cfg.warmup_steps:
                a = float(rng.uniform(-1.0, 1.0))
                u = float(np.clip(to_power(a, env.u_low, env.u_high), env.u_low, env.u_high))
            else:
                u, a = select_action(agent, obs, env.u_low, env.u_high, explore=True, rng=rng)
            res = env.step(u)
            # episodes only end by running out of data, so the next state still bootstraps
            buffer.add(Transition(obs, a, res.reward, res.observation, False))
            obs, done = res.observation, res.done
            step += 1
            if step == first_update and cfg.scale_inputs:
                fit_obs_scaler(agent, buffer._obs[:len(buffer)])
            if step >= first_update:
                td3_update(agent, buffer.sample(cfg.batch_size, rng))
        entry = _epoch_log(epoch, evaluate_policy(agent, eval_env, eval_trajectories, eval_seed))
        history.append(entry)
        if entry.mean_reward > best_reward:
            best, best_epoch, best_reward = agent.actor.copy(), epoch, entry.mean_reward
        log.info("epoch %d mean reward %.4f (best %.4f at %d)", epoch, entry.mean_reward, best_reward,
                 best_epoch)
        if on_epoch is not None:
            on_epoch(entry)
    return TrainResult(history, best, best_epoch, best_reward, agent)


def with_actor(agent: Td3Agent, actor: MlpParams) -> Td3Agent:
    """Shallow copy of ``agent`` acting with ``actor``."""
    out = copy.copy(agent)
    out.actor = actor
    return out
