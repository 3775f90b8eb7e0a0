"""Acceptance gate: one test per criterion, each printing a single PASS/FAIL line.

Criteria 3, 5, 6, 8 and 10 share one desk-scale pipeline run through the
command line (data, building model, seed sweep, evaluation, lambda sweep),
built once per session. Expect roughly an hour on one CPU core.
"""
import json
import math
import statistics
import time

import numpy as np
import pytest

from pcnnbench import bench
from pcnnbench.agents import HysteresisState, Td3Config, baseline1_act, baseline2_act, polyak_update, td3_init, \
    td3_target, td3_update, _actor_gradients
from pcnnbench.cli import EXIT_OK, main
from pcnnbench.data import generate_synthetic_frame, split_dataset
from pcnnbench.env import ZoneEnv, episode_seed
from pcnnbench.neural import MlpParams, MlpSpec, mlp_gradients, mlp_init
from pcnnbench.oracle import controls_objective, oracle_input, solve_oracle
from pcnnbench.pcnn import (ExogenousStep, PcnnState, _rollout_loss, _sample_picks, _window_arrays,
                            init_model, load_model, pcnn_consistency_check, pcnn_step, pcnn_unforced)
from pcnnbench.simplex import FEAS_TOL, OPTIMAL

from test_agents import B1_CASES, B2_CASES, hand_target, scalar_agent, scalar_batch
from test_neural import fd_gradients, max_rel_error
from test_oracle import grid_optimum, random_input
from test_pcnn import NZ, fd_rollout_grad, random_model


@pytest.fixture
def report(capsys):
    def emit(n: int, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\nACCEPTANCE {n:>2} {'PASS' if ok else 'FAIL'}: {detail}")
        assert ok, detail
    return emit


# --- desk-scale pipeline ---

def _run(*argv):
    code = main([str(a) for a in argv])
    assert code == EXIT_OK, f"{argv[0]} exited with {code}"


@pytest.fixture(scope="session")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("desk")
    timings = {}
    t0 = time.perf_counter()
    _run("generate-data", "--out", root / "data.csv")
    _run("train-pcnn", "--data", root / "data.csv", "--out", root / "pcnn")
    timings["pcnn"] = time.perf_counter() - t0
    model = root / "pcnn" / "model.json"
    t0 = time.perf_counter()
    _run("seed-sweep", "--data", root / "data.csv", "--model", model, "--out", root / "sweep")
    timings["seed_sweep"] = time.perf_counter() - t0
    seeds = json.loads((root / "sweep" / "config.json").read_text())["seeds"]
    agents = [root / "sweep" / f"agent_seed{s}.json" for s in seeds]
    (root / "full.cfg").write_text("n_test = 0\n")
    t0 = time.perf_counter()
    _run("evaluate", "--data", root / "data.csv", "--model", model, "--config", root / "full.cfg",
         *sum((["--agent", a] for a in agents), []), "--out", root / "eval_full")
    timings["evaluate_full"] = time.perf_counter() - t0
    _run("lambda-sweep", "--data", root / "data.csv", "--model", model, "--epochs", 0, "--out", root / "lambda")
    return {"root": root, "model": model, "agents": agents, "timings": timings}


# --- criteria ---

def _mlp_configs(rng, n):
    """Random networks covering the actor (tanh output) and critic (identity output) shapes."""
    out = []
    while len(out) < n:
        sizes = tuple(int(v) for v in rng.integers(1, 10, size=rng.integers(2, 5)))
        act = ["relu", "tanh"][len(out) % 2]
        spec = MlpSpec(sizes, act, ["identity", "tanh"][(len(out) // 2) % 2])
        p = mlp_init(spec, int(rng.integers(2 ** 31)))
        x = rng.normal(size=sizes[0])
        if act == "relu":  # keep finite differences away from relu kinks
            h, near = x, False
            for w, b in zip(p.weights[:-1], p.biases[:-1]):
                z = h @ w + b
                near |= bool(np.any(np.abs(z) < 1e-3))
                h = np.maximum(z, 0)
            if near:
                continue
        out.append((p, x, rng.normal(size=sizes[-1])))
    return out


def _actor_objective(agent, s):
    pre = MlpParams(MlpSpec(agent.actor.spec.layer_sizes, agent.actor.spec.hidden_activation, "identity"),
                    agent.actor.weights, agent.actor.biases)
    from pcnnbench.neural import mlp_forward
    z = mlp_forward(pre, s)
    q = mlp_forward(agent.critic1, np.column_stack([s, np.tanh(z)[:, 0]]))[:, 0]
    cfg = agent.config
    excess = np.maximum(np.abs(z) - cfg.saturation_bound, 0.0)
    return -np.mean(q) + cfg.saturation_penalty / len(s) * np.sum(excess ** 2)


def test_criterion_01_gradients(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    errors = []
    for p, x, up in _mlp_configs(rng, 14):
        g, gx = mlp_gradients(p, x, up)
        fd, fdx = fd_gradients(p, x, up)
        errors.append(max(max_rel_error(g.to_vector(), fd), max_rel_error(gx, fdx)))
    # building model: truncated BPTT through the PCNN recursion
    month = split_dataset(generate_synthetic_frame(20, seed=5, start="2021-01-01"))
    for k in range(3):
        m = init_model(NZ, (4,), seed=k)
        m.f.weights[-1] *= 10
        w = _window_arrays(m, month.train, _sample_picks(np.random.default_rng(k), month.train, 3, 8), 8)
        _, gf, graw = _rollout_loss(m, w)
        fd_f, fd_r = fd_rollout_grad(m, w)
        scale = np.maximum(np.abs(fd_f), 1e-3 * np.abs(fd_f).max())
        errors.append(max(float(np.max(np.abs(gf.to_vector() - fd_f) / scale)), max_rel_error(graw, fd_r)))
    # actor gradient chained through the critic, with large weights so the saturation term is active
    for k in range(3):
        ag = td3_init(Td3Config(hidden=(5, 4)), seed=k, obs_dim=3)
        ag.actor = MlpParams(ag.actor.spec, [w * 6 for w in ag.actor.weights], ag.actor.biases)
        s = np.random.default_rng(k).normal(size=(6, 3))
        g, _ = _actor_gradients(ag, s)
        vec, h = ag.actor.to_vector(), 1e-6
        fd = np.zeros_like(vec)
        for i in range(len(vec)):
            for sgn in (1, -1):
                e = vec.copy()
                e[i] += sgn * h
                ag2 = td3_init(Td3Config(hidden=(5, 4)), seed=k, obs_dim=3)
                ag2.critic1 = ag.critic1
                ag2.actor = ag.actor.from_vector(e)
                fd[i] += sgn * _actor_objective(ag2, s)
        fd /= 2 * h
        errors.append(max_rel_error(g.to_vector(), fd, floor=1e-7))
    elapsed = time.perf_counter() - t0
    worst = max(errors)
    report(1, len(errors) >= 20 and worst < 1e-4 and elapsed < 30,
           f"{len(errors)} configurations, max relative error {worst:.2e}, {elapsed:.1f} s")


def test_criterion_02_physical_consistency(report):
    t0 = time.perf_counter()
    m = random_model(17)
    rep = pcnn_consistency_check(m, 1000, seed=3)
    rng = np.random.default_rng(5)
    invariant = True
    for mode in ("heating", "cooling"):
        steps = [ExogenousStep(rng.uniform(-1, 1, 6), float(rng.uniform(0, 1)), float(rng.uniform(0, 1)), mode)
                 for _ in range(200)]
        ref = pcnn_unforced(m, 0.5, steps)
        sign = -1.0 if mode == "cooling" else 1.0
        for policy in (np.zeros(200), np.full(200, 2.0 * sign), rng.uniform(0, 2, 200) * sign):
            s, D = PcnnState(0.5, 0.0), []
            for k in range(200):
                s = pcnn_step(m, s, steps[k], float(policy[k]))
                D.append(s.D)
            invariant &= bool(np.array_equal(np.array(D), ref))
    elapsed = time.perf_counter() - t0
    report(2, rep.ok and rep.n_checked == 2000 and invariant and elapsed < 10,
           f"{rep.n_checked} gain checks (max deviation {rep.max_slope_error:.1e}), D invariant: {invariant}, "
           f"{elapsed:.1f} s")


def test_criterion_03_reward_objective_duality(report, pipeline):
    model = load_model(pipeline["model"])
    cfg = bench.resolve_config()
    trajs = bench.evenly_spaced(bench.load_split(cfg, pipeline["root"] / "data.csv").validation, 20)
    env = ZoneEnv(model, cfg.env_config())
    rng = np.random.default_rng(3)
    t0 = time.perf_counter()
    worst, n = 0.0, 0
    for i, tr in enumerate(trajs):
        seed = episode_seed(77, i)
        env.reset(tr, seed)
        inp = oracle_input(env)
        for _ in range(5):
            u = rng.uniform(inp.u_low, inp.u_high, inp.horizon)
            env.reset(tr, seed)
            total = math.fsum(env.step(float(x)).reward for x in u)
            worst = max(worst, abs(total + controls_objective(inp, u)))
            n += 1
    elapsed = time.perf_counter() - t0
    report(3, n == 100 and worst <= 1e-8 and elapsed < 60,
           f"{n} control sequences on {len(trajs)} trajectories, max |return + objective| {worst:.1e}, "
           f"{elapsed:.1f} s")


def test_criterion_04_lp_vs_brute_force(report):
    t0 = time.perf_counter()
    rng = np.random.default_rng(4)
    ok, worst_gap, worst_res = True, 0.0, 0.0
    for _ in range(50):
        inp = random_input(rng, 4)
        sol = solve_oracle(inp)
        best = grid_optimum(inp)
        bound = 4 * (inp.lam + inp.g * 4) * (inp.u_high - inp.u_low) / 50
        gap = best - sol.objective
        ok &= sol.status == OPTIMAL and sol.objective <= best + 1e-9 and gap <= bound
        worst_gap = max(worst_gap, gap / bound)
        worst_res = max(worst_res, sol.residual)
    elapsed = time.perf_counter() - t0
    report(4, ok and worst_res <= FEAS_TOL and elapsed < 60,
           f"50 instances, largest gap {worst_gap:.2f} of the bound, residual {worst_res:.1e}, {elapsed:.1f} s")


def _controllers(pipeline):
    return json.loads((pipeline["root"] / "eval_full" / "metrics.json").read_text())["controllers"]


def test_criterion_05_oracle_dominance(report, pipeline):
    c = _controllers(pipeline)
    oracle = c["oracle"]["mean_reward"]
    others = {k: v["mean_reward"] for k, v in c.items() if k != "oracle"}
    ok = all(oracle > others[b] for b in bench.BASELINES) and all(oracle >= v for v in others.values())
    detail = ", ".join(f"{k} {v:.3f}" for k, v in sorted(others.items()))
    report(5, ok, f"oracle {oracle:.3f} vs {detail} on {c['oracle']['n_trajectories']} trajectories "
                  f"({pipeline['timings']['evaluate_full']:.0f} s)")


def test_criterion_06_controller_ordering(report, pipeline):
    c = _controllers(pipeline)
    cfg = json.loads((pipeline["root"] / "sweep" / "config.json").read_text())["config"]
    agents = sorted(k for k in c if k.startswith("agent"))
    med = statistics.median(c[a]["mean_reward"] for a in agents)
    b1, b2, oracle = c["baseline1"]["mean_reward"], c["baseline2"]["mean_reward"], c["oracle"]["mean_reward"]
    closed = bench.gap_closed(med, max(b1, b2), oracle)
    train_time = pipeline["timings"]["seed_sweep"] + pipeline["timings"]["pcnn"]
    ok = (len(agents) >= 3 and cfg["epochs"] >= 40 and med > b1 and med > b2 and closed >= 0.5
          and train_time <= 7200)
    report(6, ok, f"median agent {med:.3f} vs baseline1 {b1:.3f}, baseline2 {b2:.3f}, oracle {oracle:.3f}: "
                  f"{closed:.0%} of the gap closed ({len(agents)} seeds x {cfg['epochs']} epochs, "
                  f"training {train_time / 60:.0f} min)")


def test_criterion_07_td3_mechanics(report):
    t0 = time.perf_counter()
    ag, batch = scalar_agent(), scalar_batch()
    noise = np.array([0.1, -0.9, 0.3, 0.2])
    expect = np.array([hand_target(batch.next_obs[i, 0], batch.reward[i], float(batch.done[i]), noise[i], 0.9)
                       for i in range(4)])
    err = max(np.max(np.abs(td3_target(ag, batch, noise) - expect)),
              np.max(np.abs(td3_update(ag, batch, noise=noise)["y"] - expect)))
    spec = Td3Config(hidden=(4,)).critic_spec(3)
    live, target = mlp_init(spec, 1), mlp_init(spec, 2)
    polyak_ok = True
    for tau in (0.0, 0.005, 1.0):
        out = polyak_update(live, target, tau)
        for lo, ta, ou in zip(live.arrays(), target.arrays(), out.arrays()):
            want = ta if tau == 0.0 else lo if tau == 1.0 else tau * lo + (1 - tau) * ta
            polyak_ok &= bool(np.array_equal(ou, want))
    # targets bit-frozen between delayed updates
    ag = td3_init(Td3Config(hidden=(6,), policy_delay=3), seed=2, obs_dim=3)
    rng = np.random.default_rng(0)
    frozen = True
    from pcnnbench.agents import Batch
    for k in range(1, 10):
        b = Batch(rng.normal(size=(8, 3)), rng.uniform(-1, 1, 8), rng.normal(size=8), rng.normal(size=(8, 3)),
                  np.zeros(8, dtype=bool))
        before = [t.to_vector().copy() for t in (ag.actor_target, ag.critic1_target, ag.critic2_target)]
        td3_update(ag, b)
        after = [t.to_vector() for t in (ag.actor_target, ag.critic1_target, ag.critic2_target)]
        same = all(np.array_equal(x, y) for x, y in zip(before, after))
        frozen &= same if k % 3 else not same
    elapsed = time.perf_counter() - t0
    report(7, err <= 1e-10 and polyak_ok and frozen and elapsed < 10,
           f"target error {err:.1e}, Polyak exact: {polyak_ok}, frozen between delays: {frozen}, {elapsed:.2f} s")


def test_criterion_08_lambda_monotonicity(report, pipeline):
    rows = [r for r in bench.read_rows(pipeline["root"] / "lambda" / "pareto.csv") if r["controller"] == "oracle"]
    factors = [float(r["factor"]) for r in rows]
    energy = [float(r["energy_kwh"]) for r in rows]
    comfort = [float(r["comfort_kh"]) for r in rows]
    tol = 1e-9
    ok = (factors == sorted(bench.LAMBDA_FACTORS, reverse=True)
          and all(b >= a - tol for a, b in zip(energy, energy[1:]))
          and all(b <= a + tol for a, b in zip(comfort, comfort[1:])))
    pts = "; ".join(f"{f:g}: {e:.2f} kWh {c:.2f} Kh" for f, e, c in zip(factors, energy, comfort))
    report(8, ok, f"oracle frontier {pts}")


def test_criterion_09_baseline_logic(report):
    t0 = time.perf_counter()
    failures = []
    for name, rule, cases in (("baseline1", baseline1_act, B1_CASES), ("baseline2", baseline2_act, B2_CASES)):
        for T, L, U, mode, on, u, on_after in cases:
            s = HysteresisState(on)
            if rule(T, L, U, mode, s) != u or s.currently_on != on_after:
                failures.append((name, T, L, U, mode, on))
    modes = {c[3] for c in B1_CASES} | {c[3] for c in B2_CASES}
    elapsed = time.perf_counter() - t0
    report(9, not failures and modes == {"heating", "cooling"} and elapsed < 1,
           f"{len(B1_CASES) + len(B2_CASES)} threshold cases, failures: {failures or 'none'}, {elapsed * 1e3:.1f} ms")


def test_criterion_10_determinism(report, pipeline, tmp_path):
    root, model = pipeline["root"], pipeline["model"]
    data = root / "data.csv"
    (tmp_path / "small.cfg").write_text("n_seeds = 1\nepochs = 2\npcnn_epochs = 2\n")
    compared = []
    for run in ("a", "b"):
        out = tmp_path / run
        _run("evaluate", "--data", data, "--model", model, *sum((["--agent", a] for a in pipeline["agents"]), []),
             "--out", out / "eval")
        _run("lambda-sweep", "--data", data, "--model", model, "--epochs", 0, "--out", out / "lambda")
        _run("seed-sweep", "--data", data, "--model", model, "--config", tmp_path / "small.cfg", "--out", out / "sweep")
        _run("train-pcnn", "--data", data, "--config", tmp_path / "small.cfg", "--out", out / "pcnn")
    files = ["eval/metrics.json", "eval/per_trajectory.csv", "lambda/metrics.json", "lambda/pareto.csv",
             "sweep/metrics.json", "sweep/convergence.csv", "pcnn/metrics.json", "pcnn/model.json"]
    same = [(tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes() for f in files]
    # the lambda-sweep rerun also reproduces the pipeline's own output
    same.append((tmp_path / "a" / "lambda" / "pareto.csv").read_bytes()
                == (root / "lambda" / "pareto.csv").read_bytes())
    compared = files + ["pipeline lambda/pareto.csv"]
    diff = [f for f, s in zip(compared, same) if not s]
    report(10, all(same), f"{len(compared)} metric files byte-identical across reruns, differing: {diff or 'none'}")
