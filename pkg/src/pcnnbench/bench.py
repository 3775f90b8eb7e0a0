"""Experiment harness: data generation, model and agent training, paired
evaluation against the baselines and the oracle, seed and lambda sweeps.

Every command writes into an output directory: the resolved configuration
(``config.json``), tidy CSV tables and a ``metrics.json`` whose numbers are
recomputed from the per-row CSV it sits next to. Files contain no timestamps
or host information, so a rerun with the same configuration and seed
reproduces them byte for byte.
"""
from __future__ import annotations

import csv
import dataclasses
import json
import logging
import math
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from functools import partial
from pathlib import Path

import numpy as np

from .agents import (PolicyController, TrainResult, Td3Agent, Td3Config, baseline_controller, run_episode,
                     td3_init, train_loop, with_actor)
from .data import DatasetSplit, Trajectory, generate_synthetic_frame, load_csv, split_dataset, write_csv
from .env import DT_HOURS, EnvConfig, ZoneEnv, episode_seed, load_config_file
from .errors import ConfigError
from .neural import load_params, save_params
from .pcnn import (PcnnModel, PcnnTrainConfig, load_model, one_step_mse_celsius, pcnn_consistency_check,
                   pcnn_train, save_model)
from .oracle import oracle_rollout, unavoidable_penalty

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
LAMBDA_FACTORS = (4.0, 2.0, 1.0, 0.5, 0.25, 0.125, 0.0625)
BASELINES = ("baseline1", "baseline2")
EVAL_SEED_OFFSET = 1_000_003  # separates evaluation noise from training noise


@dataclass
class RunConfig:
    """Every knob of a run, flat so it can be set from a ``key = value`` file."""

    # synthetic data
    days: int = 365
    data_seed: int = 0
    start: str = "2021-06-01"
    val_fraction: float = 0.2
    # building model
    pcnn_epochs: int = 40
    pcnn_batches_per_epoch: int = 50
    pcnn_hidden: tuple[int, ...] = (32, 32)
    pcnn_horizon: int = 48
    pcnn_learning_rate: float = 1e-3
    # environment
    lam: float = 0.5
    noise_sigma: float = 0.1
    u_max_heating: float = 2.0
    u_max_cooling: float = 2.0
    gamma: float = 0.95
    # agent
    hidden: tuple[int, ...] = (64, 64, 64)
    learning_rate: float = 3e-4
    rectified_adam: bool = False
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    warmup_steps: int = 2000
    scale_inputs: bool = True
    epochs: int = 60
    steps_per_epoch: int = 5000
    n_eval: int = 50
    # protocol
    seed: int = 0
    n_seeds: int = 3
    n_test: int = 200  # 0 uses the whole validation split
    n_sweep: int = 100
    lambda_factors: tuple[float, ...] = LAMBDA_FACTORS
    lambda_epochs: int = 20
    workers: int = 1

    def __post_init__(self):
        self.pcnn_hidden = tuple(int(h) for h in self.pcnn_hidden)
        self.hidden = tuple(int(h) for h in self.hidden)
        self.lambda_factors = tuple(float(f) for f in self.lambda_factors)
        for name in ("days", "pcnn_batches_per_epoch", "pcnn_horizon", "batch_size", "buffer_capacity",
                     "steps_per_epoch", "n_eval", "n_seeds", "n_sweep", "workers"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        for name in ("pcnn_epochs", "warmup_steps", "epochs", "n_test", "lambda_epochs"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be >= 0")
        if not self.lambda_factors or any(f <= 0 for f in self.lambda_factors):
            raise ConfigError("lambda factors must be positive")
        if len(set(self.lambda_factors)) != len(self.lambda_factors):
            raise ConfigError("lambda factors must be distinct")
        if not 0 < self.val_fraction < 1:
            raise ConfigError("val_fraction must lie in (0, 1)")
        self.env_config()
        try:
            self.td3_config()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.seed + i for i in range(self.n_seeds))

    @property
    def eval_seed(self) -> int:
        return self.seed + EVAL_SEED_OFFSET

    def env_config(self, lam: float | None = None) -> EnvConfig:
        return EnvConfig(self.lam if lam is None else lam, self.noise_sigma, self.u_max_heating,
                         self.u_max_cooling, self.gamma)

    def td3_config(self) -> Td3Config:
        return Td3Config(gamma=self.gamma, batch_size=self.batch_size, buffer_capacity=self.buffer_capacity,
                         hidden=self.hidden, learning_rate=self.learning_rate, rectified_adam=self.rectified_adam,
                         warmup_steps=self.warmup_steps, scale_inputs=self.scale_inputs)

    def pcnn_config(self) -> PcnnTrainConfig:
        return PcnnTrainConfig(epochs=self.pcnn_epochs, batches_per_epoch=self.pcnn_batches_per_epoch,
                               horizon=self.pcnn_horizon, learning_rate=self.pcnn_learning_rate,
                               hidden=self.pcnn_hidden)

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in dataclasses.asdict(self).items()}


DESK_SCALE = RunConfig()
FULL_SCALE = dataclasses.replace(DESK_SCALE, hidden=(512, 512, 512), learning_rate=1e-4, epochs=100,
                                 n_seeds=10, n_test=0, n_sweep=400, lambda_epochs=100, pcnn_epochs=80)


def _tuple_of(kind):
    def parse(text: str):
        parts = [p for p in text.replace(",", " ").split() if p]
        if not parts:
            raise ValueError("empty list")
        return tuple(kind(eval_fraction(p)) if kind is float else kind(p) for p in parts)
    return parse


def eval_fraction(text: str) -> float:
    """``"1/16"`` or ``"0.0625"`` -> 0.0625."""
    if "/" in text:
        num, den = text.split("/", 1)
        return float(num) / float(den)
    return float(text)


def parse_bool(text: str) -> bool:
    key = text.strip().lower()
    if key in ("1", "true", "yes", "on"):
        return True
    if key in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def config_types() -> dict:
    conv = {"int": int, "float": float, "str": str, "bool": parse_bool,
            "tuple[int, ...]": _tuple_of(int), "tuple[float, ...]": _tuple_of(float)}
    return {f.name: conv[f.type] for f in dataclasses.fields(RunConfig)}


def resolve_config(full_scale: bool = False, path=None, **overrides) -> RunConfig:
    """Preset, then the config file, then explicit overrides (``None`` values are skipped)."""
    base = FULL_SCALE if full_scale else DESK_SCALE
    values = load_config_file(path, config_types()) if path is not None else {}
    values.update({k: v for k, v in overrides.items() if v is not None})
    return dataclasses.replace(base, **values)


# --- inputs ---

def load_split(config: RunConfig, data_path=None) -> DatasetSplit:
    if data_path is None:
        records = generate_synthetic_frame(config.days, config.data_seed, start=config.start)
    else:
        if not Path(data_path).is_file():
            raise FileNotFoundError(f"data file not found: {data_path}")
        records = load_csv(data_path)
    split = split_dataset(records, val_fraction=config.val_fraction)
    if not split.train or not split.validation:
        raise ConfigError("data too short for a train/validation split")
    return split


def evenly_spaced(items: list, n: int, offset: float = 0.0) -> list:
    """``n`` items spread over the list; ``n == 0`` or ``n >= len`` returns all of them."""
    if n == 0 or n >= len(items):
        return list(items)
    idx = ((np.arange(n) + offset) * len(items) // n).astype(int)
    return [items[i] for i in idx]


def test_set(config: RunConfig, split: DatasetSplit) -> list[Trajectory]:
    return evenly_spaced(split.validation, config.n_test)


def eval_set(config: RunConfig, split: DatasetSplit) -> list[Trajectory]:
    # offset by half a slot so it does not coincide with the test picks
    return evenly_spaced(split.validation, config.n_eval, offset=0.5)


def sweep_set(config: RunConfig, split: DatasetSplit) -> list[Trajectory]:
    return evenly_spaced(split.validation, config.n_sweep)


def require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"missing --{what}")
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(f"{what} file not found: {p}")
    return p


# --- output helpers ---

def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_rows(path, fields, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fields)
        for row in rows:
            w.writerow([_fmt(row[f]) if isinstance(row, dict) else _fmt(x) for f, x in
                        zip(fields, row if not isinstance(row, dict) else fields)])


def read_rows(path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_json(path, payload) -> None:
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")


def write_config_echo(out: Path, command: str, config: RunConfig, seeds, inputs: dict) -> None:
    write_json(out / "config.json", {"command": command, "config": config.to_dict(),
                                     "seeds": [int(s) for s in seeds],
                                     "inputs": {k: str(v) for k, v in inputs.items() if v is not None}})


def _pool_map(fn, items, workers: int):
    """Ordered map; results do not depend on the number of workers."""
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


# --- agents on disk ---

def save_agent(path, agent: Td3Agent, extra: dict | None = None) -> None:
    payload = {"td3": {k: list(v) if isinstance(v, tuple) else v
                       for k, v in dataclasses.asdict(agent.config).items()},
               "obs_shift": agent.obs_shift.tolist(), "obs_scale": agent.obs_scale.tolist(), **(extra or {})}
    save_params(path, agent.actor, payload)


def load_agent(path) -> Td3Agent:
    """An inference-only agent: the stored actor and input standardization."""
    payload = json.loads(Path(path).read_text())
    extra = payload.get("extra", {})
    td3 = extra.get("td3", {})
    cfg = Td3Config(**{k: tuple(v) if isinstance(v, list) else v for k, v in td3.items()})
    actor = load_params(path)
    agent = td3_init(cfg, 0, obs_dim=actor.spec.n_in)
    agent = with_actor(agent, actor)
    agent.obs_shift = np.array(extra.get("obs_shift", agent.obs_shift), dtype=float)
    agent.obs_scale = np.array(extra.get("obs_scale", agent.obs_scale), dtype=float)
    return agent


# --- data and model commands ---

def cmd_generate_data(config: RunConfig, out) -> Path:
    out = Path(out)
    path = out if out.suffix == ".csv" else out / "data.csv"
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = generate_synthetic_frame(config.days, config.data_seed, start=config.start)
    try:
        write_csv(path, frame)
    except OSError as exc:
        raise ConfigError(f"cannot write {path}: {exc}") from exc
    log.info("wrote %d rows to %s", len(frame), path)
    return path


def cmd_train_pcnn(config: RunConfig, out, data_path=None) -> PcnnModel:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    split = load_split(config, data_path)
    curve = []
    model = pcnn_train(split.train, config.pcnn_config(), config.seed,
                       on_epoch=lambda e, tr, va: curve.append((e + 1, tr, va)))
    save_model(out / "model.json", model)
    write_rows(out / "pcnn_log.csv", ("epoch", "train_loss", "val_loss"), curve)
    check = pcnn_consistency_check(model, 1000, seed=config.seed)
    write_json(out / "metrics.json", {
        "schema_version": SCHEMA_VERSION,
        "one_step_mse_celsius": one_step_mse_celsius(model, evenly_spaced(split.validation, 100)),
        "physical": model.phys, "consistent": bool(check.ok),
        "n_train_trajectories": len(split.train), "n_validation_trajectories": len(split.validation)})
    write_config_echo(out, "train-pcnn", config, [config.seed], {"data": data_path})
    return model


# --- agent training ---

def _train_one(seed: int, config: RunConfig, model: PcnnModel, split: DatasetSplit,
               lam: float | None = None, epochs: int | None = None) -> TrainResult:
    env = ZoneEnv(model, config.env_config(lam))
    agent = td3_init(config.td3_config(), seed)
    return train_loop(agent, env, split.train, eval_set(config, split),
                      config.epochs if epochs is None else epochs, seed,
                      steps_per_epoch=config.steps_per_epoch, eval_seed=config.eval_seed)


def _best_agent(result: TrainResult) -> Td3Agent:
    return with_actor(result.agent, result.best_actor)


def baseline_reference(config: RunConfig, model: PcnnModel, split: DatasetSplit) -> dict:
    """Mean reward of each baseline on the training-time evaluation episodes."""
    env = ZoneEnv(model, config.env_config())
    trajs = eval_set(config, split)
    out = {}
    for name in BASELINES:
        ctrl = baseline_controller(name)
        stats = [run_episode(env, ctrl, tr, episode_seed(config.eval_seed, i)) for i, tr in enumerate(trajs)]
        out[name] = math.fsum(s.reward for s in stats) / len(stats)
    return out


CONVERGENCE_FIELDS = ("seed", "epoch", "mean_reward", "median_reward", "min_reward", "max_reward",
                      "energy_kwh", "comfort_kh")


def _convergence_rows(seed: int, result: TrainResult) -> list[list]:
    return [[seed, *e.row()] for e in result.log]


def cmd_train_agent(config: RunConfig, out, model_path, data_path=None) -> TrainResult:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(require_file(model_path, "model"))
    split = load_split(config, data_path)
    result = _train_one(config.seed, config, model, split)
    save_agent(out / "agent.json", _best_agent(result), {"seed": config.seed, "best_epoch": result.best_epoch})
    write_rows(out / "convergence.csv", CONVERGENCE_FIELDS, _convergence_rows(config.seed, result))
    write_json(out / "metrics.json", {"schema_version": SCHEMA_VERSION, "seed": config.seed,
                                      "best_epoch": result.best_epoch, "best_reward": result.best_reward,
                                      "baselines": baseline_reference(config, model, split)})
    write_config_echo(out, "train-agent", config, [config.seed], {"data": data_path, "model": model_path})
    return result


def median_curve(rows: list[dict]) -> list[tuple[int, float]]:
    """Per-epoch sample median of the seeds' mean evaluation rewards."""
    by_epoch: dict[int, list[float]] = {}
    for r in rows:
        by_epoch.setdefault(int(r["epoch"]), []).append(float(r["mean_reward"]))
    return [(e, statistics.median(v)) for e, v in sorted(by_epoch.items())]


def cmd_seed_sweep(config: RunConfig, out, model_path, data_path=None) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(require_file(model_path, "model"))
    split = load_split(config, data_path)
    results = _pool_map(partial(_train_one, config=config, model=model, split=split), list(config.seeds),
                        config.workers)
    rows = []
    per_seed = {}
    for seed, res in zip(config.seeds, results):
        rows += _convergence_rows(seed, res)
        save_agent(out / f"agent_seed{seed}.json", _best_agent(res), {"seed": seed, "best_epoch": res.best_epoch})
        per_seed[str(seed)] = {"best_epoch": res.best_epoch, "best_reward": res.best_reward,
                               "final_reward": res.log[-1].mean_reward if res.log else None}
    write_rows(out / "convergence.csv", CONVERGENCE_FIELDS, rows)
    curve = median_curve(read_rows(out / "convergence.csv"))
    write_rows(out / "convergence_median.csv", ("epoch", "median_reward"), curve)
    refs = baseline_reference(config, model, split)
    beat = sum(all(v["best_reward"] > r for r in refs.values()) for v in per_seed.values())
    metrics = {"schema_version": SCHEMA_VERSION, "seeds": per_seed, "baselines": refs,
               "n_seeds": len(per_seed), "n_seeds_beating_baselines": beat}
    write_json(out / "metrics.json", metrics)
    write_config_echo(out, "seed-sweep", config, config.seeds, {"data": data_path, "model": model_path})
    return metrics


# --- evaluation ---

@dataclass(frozen=True)
class EvalMetrics:
    controller: str
    mean_reward: float
    median_reward: float
    energy_kwh: float  # mean per trajectory
    comfort_kh: float  # mean per trajectory
    gap_to_optimal: float  # mean oracle reward minus controller reward
    n_trajectories: int

    def __post_init__(self):
        if self.energy_kwh < 0 or self.comfort_kh < 0:
            raise ValueError("energy and comfort must be non-negative")


TRAJECTORY_FIELDS = ("trajectory", "start", "mode", "steps", "controller", "reward", "energy_kwh",
                     "comfort_kh", "unavoidable", "reward_adj", "comfort_adj", "gap_to_optimal")


def _evaluate_trajectory(item, model: PcnnModel, env_config: EnvConfig, base_seed: int,
                         controllers: dict) -> list[dict]:
    """All controllers on one trajectory with the same noise stream."""
    index, tr = item
    seed = episode_seed(base_seed, index)
    env = ZoneEnv(model, env_config)
    orc = oracle_rollout(tr, model, env_config, seed)
    unavoid = unavoidable_penalty(tr, model, env_config, seed)
    results = {"oracle": (orc.replay_return, orc.energy_kwh, orc.comfort_kh, len(orc.controls))}
    for name, ctrl in controllers.items():
        st = run_episode(env, ctrl, tr, seed)
        results[name] = (st.reward, st.energy_kwh, st.comfort_kh, st.steps)
    rows = []
    for name, (r, e, c, n) in results.items():
        rows.append({"trajectory": index, "start": str(tr.frame.timestamps[0]),
                     "mode": "cooling" if tr.frame.cooling[0] else "heating", "steps": n,
                     "controller": name, "reward": r, "energy_kwh": e, "comfort_kh": c,
                     "unavoidable": unavoid, "reward_adj": r + unavoid,
                     "comfort_adj": max(0.0, c - unavoid * DT_HOURS),
                     "gap_to_optimal": orc.replay_return - r})
    return rows


def evaluate_rows(model: PcnnModel, env_config: EnvConfig, trajectories, base_seed: int, controllers: dict,
                  workers: int = 1) -> list[dict]:
    fn = partial(_evaluate_trajectory, model=model, env_config=env_config, base_seed=base_seed,
                 controllers=controllers)
    rows = []
    for chunk in _pool_map(fn, list(enumerate(trajectories)), workers):
        rows += chunk
    return rows


def metrics_from_rows(rows: list[dict]) -> dict[str, EvalMetrics]:
    """Aggregates of the per-trajectory table (values may be CSV strings)."""
    groups: dict[str, list[dict]] = {}
    for r in rows:
        groups.setdefault(r["controller"], []).append(r)
    out = {}
    for name, g in groups.items():
        col = lambda k: [float(r[k]) for r in g]
        n = len(g)
        out[name] = EvalMetrics(name, math.fsum(col("reward_adj")) / n, statistics.median(col("reward_adj")),
                                math.fsum(col("energy_kwh")) / n, math.fsum(col("comfort_adj")) / n,
                                math.fsum(col("gap_to_optimal")) / n, n)
    return out


def gap_closed(agent_reward: float, baseline_reward: float, oracle_reward: float) -> float:
    """Fraction of the baseline-to-oracle reward gap an agent recovers."""
    denom = oracle_reward - baseline_reward
    return math.inf if denom <= 0 else (agent_reward - baseline_reward) / denom


def summarize(metrics: dict[str, EvalMetrics]) -> dict:
    out = {"schema_version": SCHEMA_VERSION, "controllers": {k: dataclasses.asdict(v) for k, v in metrics.items()}}
    agents = sorted(k for k in metrics if k.startswith("agent"))
    if agents:
        best_base = max(metrics[b].mean_reward for b in BASELINES if b in metrics)
        oracle = metrics["oracle"].mean_reward
        rewards = [metrics[a].mean_reward for a in agents]
        med = statistics.median(rewards)
        out["agents"] = {"names": agents, "median_mean_reward": med,
                         "median_gap_closed": gap_closed(med, best_base, oracle),
                         "gap_closed": {a: gap_closed(metrics[a].mean_reward, best_base, oracle) for a in agents}}
    return out


def cmd_evaluate(config: RunConfig, out, model_path, agent_paths=(), data_path=None,
                 baselines=BASELINES) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(require_file(model_path, "model"))
    controllers = {name: baseline_controller(name) for name in baselines}
    for p in agent_paths:
        agent = load_agent(require_file(p, "agent"))
        name = f"agent_{Path(p).stem}"
        if name in controllers:
            raise ConfigError(f"duplicate agent name {name}")
        controllers[name] = PolicyController(agent)
    split = load_split(config, data_path)
    trajs = test_set(config, split)
    rows = evaluate_rows(model, config.env_config(), trajs, config.seed, controllers, config.workers)
    write_rows(out / "per_trajectory.csv", TRAJECTORY_FIELDS, rows)
    summary = summarize(metrics_from_rows(read_rows(out / "per_trajectory.csv")))
    write_json(out / "metrics.json", summary)
    write_config_echo(out, "evaluate", config, [config.seed],
                      {"data": data_path, "model": model_path, **{f"agent{i}": p for i, p in enumerate(agent_paths)}})
    return summary


def cmd_oracle(config: RunConfig, out, model_path, data_path=None, dump_index: int | None = None) -> dict:
    """Oracle and unavoidable penalties alone on the test set; optionally dump one LP."""
    from .oracle import build_lp, oracle_input
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(require_file(model_path, "model"))
    trajs = test_set(config, load_split(config, data_path))
    rows = evaluate_rows(model, config.env_config(), trajs, config.seed, {}, config.workers)
    write_rows(out / "per_trajectory.csv", TRAJECTORY_FIELDS, rows)
    summary = summarize(metrics_from_rows(read_rows(out / "per_trajectory.csv")))
    if dump_index is not None:
        if not 0 <= dump_index < len(trajs):
            raise ConfigError(f"trajectory index {dump_index} out of range")
        env = ZoneEnv(model, config.env_config())
        env.reset(trajs[dump_index], episode_seed(config.seed, dump_index))
        build_lp(oracle_input(env)).dump(out / f"lp_{dump_index}.txt")
    write_json(out / "metrics.json", summary)
    write_config_echo(out, "oracle", config, [config.seed], {"data": data_path, "model": model_path})
    return summary


# --- lambda sweep ---

PARETO_FIELDS = ("controller", "factor", "lam", "energy_kwh", "comfort_kh", "mean_reward", "n_trajectories")


def _oracle_point(item, model, config: RunConfig, lam: float, base_seed: int):
    index, tr = item
    seed = episode_seed(base_seed, index)
    res = oracle_rollout(tr, model, config.env_config(), seed, lam=lam)
    return res.replay_return, res.energy_kwh, res.comfort_kh


def cmd_lambda_sweep(config: RunConfig, out, model_path, data_path=None) -> list[dict]:
    """One oracle evaluation (and one agent, unless ``lambda_epochs`` is 0) per lambda factor.

    Agents are trained with the run seed for every factor. Comfort is
    reported net of the unavoidable violation, which does not depend on lambda.
    """
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    model = load_model(require_file(model_path, "model"))
    split = load_split(config, data_path)
    trajs = sweep_set(config, split)
    items = list(enumerate(trajs))
    unavoid_fn = partial(_unavoidable_item, model=model, env_config=config.env_config(), base_seed=config.seed)
    unavoid = _pool_map(unavoid_fn, items, config.workers)
    unavoid_kh = math.fsum(unavoid) * DT_HOURS / len(trajs)
    points = []
    for factor in sorted(config.lambda_factors, reverse=True):
        lam = config.lam * factor
        res = _pool_map(partial(_oracle_point, model=model, config=config, lam=lam, base_seed=config.seed),
                        items, config.workers)
        n = len(res)
        points.append({"controller": "oracle", "factor": factor, "lam": lam,
                       "energy_kwh": math.fsum(r[1] for r in res) / n,
                       "comfort_kh": max(0.0, math.fsum(r[2] for r in res) / n - unavoid_kh),
                       "mean_reward": math.fsum(r[0] + u for r, u in zip(res, unavoid)) / n, "n_trajectories": n})
        if config.lambda_epochs > 0:
            result = _train_one(config.seed, config, model, split, lam=lam, epochs=config.lambda_epochs)
            agent = _best_agent(result)
            save_agent(out / f"agent_factor{factor:g}.json", agent, {"seed": config.seed, "factor": factor})
            env = ZoneEnv(model, config.env_config(lam))
            stats = [run_episode(env, PolicyController(agent), tr, episode_seed(config.seed, i))
                     for i, tr in items]
            points.append({"controller": "agent", "factor": factor, "lam": lam,
                           "energy_kwh": math.fsum(s.energy_kwh for s in stats) / n,
                           "comfort_kh": max(0.0, math.fsum(s.comfort_kh for s in stats) / n - unavoid_kh),
                           "mean_reward": math.fsum(s.reward + u for s, u in zip(stats, unavoid)) / n,
                           "n_trajectories": n})
    write_rows(out / "pareto.csv", PARETO_FIELDS, points)
    write_json(out / "pareto_series.json", pareto_series(out / "pareto.csv"))
    write_json(out / "metrics.json", {"schema_version": SCHEMA_VERSION, "points": points,
                                      "unavoidable_comfort_kh": unavoid_kh})
    write_config_echo(out, "lambda-sweep", config, [config.seed], {"data": data_path, "model": model_path})
    return points


def _unavoidable_item(item, model, env_config: EnvConfig, base_seed: int) -> float:
    index, tr = item
    return unavoidable_penalty(tr, model, env_config, episode_seed(base_seed, index))


def pareto_series(path) -> dict:
    """Plot-ready series from ``pareto.csv``: one (energy, comfort) polyline per controller."""
    series: dict[str, dict] = {}
    for r in read_rows(path):
        missing = [f for f in PARETO_FIELDS if f not in r]
        if missing:
            raise ValueError(f"pareto table lacks columns {missing}")
        s = series.setdefault(r["controller"], {"factor": [], "energy_kwh": [], "comfort_kh": []})
        s["factor"].append(float(r["factor"]))
        s["energy_kwh"].append(float(r["energy_kwh"]))
        s["comfort_kh"].append(float(r["comfort_kh"]))
    return series
