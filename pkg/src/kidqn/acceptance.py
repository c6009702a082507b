"""Acceptance criteria as runnable checks.

Each ``criterion_*`` function returns a :class:`CriterionResult`; ``main``
runs them in order and prints one PASS/FAIL line per criterion.  Criteria
5-7 share one set of training runs (see :func:`learning_experiment`).
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from .checkpoint import checkpoint_from_bytes, load_checkpoint
from .config import RANDOM_ON_OBJECT, RunConfig
from .core import Action, WorkspaceConfig, action_to_world
from .geometry import inside_box, penetrates
from .harness import TRAIN_DIST, UNSEEN_WALLS, build_suite, evaluate_policy, greedy_policy, \
    random_on_object_policy, train
from .learner import DQN, KI_DQN, LearnerConfig, Transition, compute_gradients, dqn_target, \
    dqn_target_map, ki_target_map
from .qfunc import ConvSpec, NetConfig, backward, forward, init_params, q_values
from .render import object_masks, render_observation
from .sim import OutcomeKind, Regime, execute_sag, generate_test_scene, generate_training_scene
from .tabular import TinyMDP, tabular_ki_q_learning, tabular_q_learning, value_iteration

TINY_WS = WorkspaceConfig(side_cm=40.0, action_grid=4, obs_grid=8, rotations=(0.0, 45.0))
# default layer layout with narrower channels, so an exhaustive check stays fast
TINY_NET = NetConfig(trunk=(ConvSpec(3, 2, 4), ConvSpec(3, 2, 8), ConvSpec(3, 1, 8)))

# learner settings for the desk-scale learning experiments: the executed term keeps full
# weight, the off-mask terms share weight 1, and an executed off-mask cell is pushed to 0
DESK_LEARNER = LearnerConfig(lr_trunk=1e-3, lr_head=1e-2, loss_normalization="split", off_mask_weight=1.0,
                             executed_off_mask="zero")


@dataclass
class CriterionResult:
    number: int
    name: str
    passed: bool
    detail: str
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.number}. {self.name}: {self.detail} ({self.seconds:.1f}s)"


def _timed(number: int, name: str):
    def deco(fn):
        def run(*args, **kw):
            t0 = time.perf_counter()
            passed, detail = fn(*args, **kw)
            return CriterionResult(number, name, bool(passed), detail, time.perf_counter() - t0)
        run.__name__ = fn.__name__
        run.__doc__ = fn.__doc__
        return run
    return deco


# --------------------------------------------------------------------------
# 1. gradients


def finite_difference_check(seed: int, ws: WorkspaceConfig = TINY_WS, net: NetConfig = NetConfig(),
                            h: float = 1e-5, floor: float = 1e-8) -> float:
    """Worst elementwise relative error between backward and central differences of <G, Q>."""
    rng = np.random.default_rng(seed)
    p = init_params(seed, net)
    for k in p.keys():
        if k.endswith(".b"):  # non-zero biases move pre-activations off the relu kink at 0
            p.weights[k] = rng.uniform(-0.1, 0.1, p.weights[k].shape)
    obs = rng.uniform(0.0, 1.0, (ws.channels, ws.obs_grid, ws.obs_grid))
    g_out = rng.normal(size=(ws.n_rotations, ws.action_grid, ws.action_grid))
    _, cache = forward(p, obs, net, ws)
    grads = backward(p, cache, g_out)
    worst = 0.0
    for k in p.keys():
        w = p.weights[k]
        for idx in np.ndindex(w.shape):
            old = w[idx]
            w[idx] = old + h
            lp = float((g_out * q_values(p, obs, net, ws)).sum())
            w[idx] = old - h
            lm = float((g_out * q_values(p, obs, net, ws)).sum())
            w[idx] = old
            num = (lp - lm) / (2 * h)
            ana = float(grads[k][idx])
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), floor))
    return worst


@_timed(1, "gradient check")
def criterion_1_gradients(seeds: Sequence[int] = range(5), tol: float = 1e-4):
    errs = [finite_difference_check(s, TINY_WS, TINY_NET) for s in seeds]
    return max(errs) <= tol, f"max relative error {max(errs):.2e} over {len(errs)} seeds (tol {tol:g})"


# --------------------------------------------------------------------------
# 2. reduction


def random_transition(rng: np.random.Generator, ws: WorkspaceConfig, masks: Optional[np.ndarray] = None,
                      terminal: Optional[bool] = None) -> Transition:
    shape = (ws.channels, ws.obs_grid, ws.obs_grid)
    if terminal is None:
        terminal = bool(rng.random() < 0.3)
    if masks is None:
        masks = rng.random((ws.n_rotations, ws.action_grid, ws.action_grid)) < 0.3
    a = Action.from_flat(int(rng.integers(ws.n_actions)), ws.action_grid)
    return Transition(rng.uniform(0, 1, shape), a, int(terminal), rng.uniform(0, 1, shape), terminal, masks)


def mode_gradients(method: str, t: Transition, params, target, ws, net=NetConfig(), gamma=0.95,
                   normalization="mean"):
    q, cache = forward(params, t.obs, net, ws)
    y = dqn_target(t, target, net, ws, gamma)
    targets, contrib = (ki_target_map if method == KI_DQN else dqn_target_map)(t, q, y)
    grads, td, _ = compute_gradients(params, cache, q, targets, contrib, t.action, normalization)
    return grads, td


@_timed(2, "reduction to vanilla DQN")
def criterion_2_reduction(n: int = 20, tol: float = 1e-12):
    rng = np.random.default_rng(2)
    ws = TINY_WS
    worst = 0.0
    for k in range(n):
        params, target = init_params(100 + k, NetConfig()), init_params(200 + k, NetConfig())
        full = np.ones((ws.n_rotations, ws.action_grid, ws.action_grid), dtype=bool)
        t = random_transition(rng, ws, masks=full)
        for norm in ("mean", "sum", "split"):
            g_ki, td_ki = mode_gradients(KI_DQN, t, params, target, ws, normalization=norm)
            g_dqn, td_dqn = mode_gradients(DQN, t, params, target, ws, normalization=norm)
            worst = max(worst, abs(td_ki - td_dqn), *(float(np.abs(g_ki[key] - g_dqn[key]).max()) for key in g_ki))
    return worst <= tol, f"max |KI - DQN| gradient difference {worst:.1e} on {n} transitions (tol {tol:g})"


# --------------------------------------------------------------------------
# 3. tabular


@_timed(3, "tabular oracle")
def criterion_3_tabular(steps: int = 10_000, tol: float = 1e-3):
    mdp = TinyMDP.chain(3, gamma=0.95)
    q_star = value_iteration(mdp)
    dist = max(float(np.abs(tabular_q_learning(mdp, steps, seed=s) - q_star).max()) for s in range(5))

    masks = np.ones((mdp.n_states, mdp.n_actions), dtype=bool)
    masks[0, 1] = False
    masks[1, 1] = False
    q_ki = tabular_ki_q_learning(mdp, masks, steps, seed=0, q_init=1.0)
    off = float(np.abs(q_ki[~masks]).max())

    full = np.ones_like(masks)
    ta, tb = [], []
    tabular_q_learning(mdp, steps, seed=7, q_init=0.3, trajectory=ta)
    tabular_ki_q_learning(mdp, full, steps, seed=7, q_init=0.3, trajectory=tb)
    same = len(ta) == len(tb) and all(np.array_equal(x, y) for x, y in zip(ta, tb))
    ok = dist <= tol and off < tol and same
    return ok, (f"sup-norm to Q* {dist:.1e}, masked-off max {off:.1e}, "
                f"full-mask trajectories identical: {same}")


# --------------------------------------------------------------------------
# 4. physics


def fine_step_displacement(scene, a: Action, ws: WorkspaceConfig, step: float = 0.01,
                           retreat: float = 10.0) -> float:
    """Brute-force sticking push: walk the tip from ``p - retreat*u`` to ``p`` in
    ``step`` increments.  From the first sample at which the tip lies in the
    object footprint, every further increment carries the object along with the
    tip, unless that increment would penetrate a wall or leave the workspace."""
    p, u = action_to_world(a, ws)
    start = p - retreat * u
    obj = scene.object.footprint
    walls = [w.footprint for w in scene.walls]
    offset = 0.0
    contact = False
    for k in range(int(round(retreat / step)) + 1):
        if not contact:
            tip = start + k * step * u
            contact = bool(obj.contains(tip[None, :])[0])
            continue
        nxt = obj.moved((offset + step) * u)
        if any(penetrates(nxt, w, tol=1e-9) for w in walls) or not inside_box(nxt, ws.side_cm, tol=1e-9):
            break
        offset += step
    return offset


@_timed(4, "physics oracle")
def criterion_4_physics(pairs: int = 200, tol: float = 0.05):
    ws = WorkspaceConfig.desk()
    rng = np.random.default_rng(4)
    worst, checked, unchanged_ok, no_contact = 0.0, 0, True, 0
    k = 0
    while checked < pairs:
        gen = generate_training_scene if k % 2 == 0 else generate_test_scene
        scene = gen(40_000 + k, ws)
        k += 1
        masks = object_masks(scene, ws)
        cells = np.flatnonzero(masks.ravel())
        if rng.random() < 0.75 and cells.size:
            a = Action.from_flat(int(cells[rng.integers(cells.size)]), ws.action_grid)
        else:
            a = Action.from_flat(int(rng.integers(ws.n_actions)), ws.action_grid)
        out = execute_sag(scene, a, Regime.SIM, ws)
        if out.kind is OutcomeKind.WALL_COLLISION:
            continue
        checked += 1
        if out.kind is OutcomeKind.NO_CONTACT:
            no_contact += 1
            unchanged_ok &= out.new_scene == scene and out.object_displacement == 0.0
            continue
        worst = max(worst, abs(out.object_displacement - fine_step_displacement(scene, a, ws)))
    ok = worst <= tol and unchanged_ok
    return ok, (f"max |analytic - fine-step| {worst:.4f} cm on {pairs} pairs ({no_contact} no-contact, "
                f"scene unchanged: {unchanged_ok})")


# --------------------------------------------------------------------------
# 5-7. learning experiments


@dataclass
class MethodSummary:
    method: str
    per_seed: Dict[str, List[float]] = field(default_factory=dict)
    seconds: List[float] = field(default_factory=list)

    def mean(self, key: str) -> float:
        return float(np.mean(self.per_seed[key]))

    def std(self, key: str) -> float:
        return float(np.std(self.per_seed[key]))


@dataclass
class Experiment:
    results: Dict[str, MethodSummary]
    random_on_object: float
    suppression: Dict[str, List[float]]
    seconds: float


def experiment_config(method: str, seed: int, iterations: int = 5000,
                      learner: LearnerConfig = DESK_LEARNER) -> RunConfig:
    return RunConfig(method=method, iterations=iterations, seed=seed, learner=learner,
                     workspace=WorkspaceConfig.desk(), output_dir="")


def suppression_ratios(params, cfg: RunConfig, count: int = 20, eval_seed: int = 777) -> List[float]:
    """mean |Q| off-mask divided by max on-mask Q, per held-out unseen-wall observation."""
    ws = cfg.workspace
    ratios = []
    for _, scene in build_suite(UNSEEN_WALLS, eval_seed, count, ws):
        q = q_values(params, render_observation(scene, ws), cfg.net, ws)
        m = object_masks(scene, ws)
        on_max = float(q[m].max())
        off = float(np.abs(q[~m]).mean())
        ratios.append(off / on_max if on_max > 0 else math.inf)
    return ratios


def learning_experiment(seeds: Sequence[int] = (0, 1, 2), iterations: int = 5000, top_k: int = 5,
                        learner: LearnerConfig = DESK_LEARNER, log=print) -> Experiment:
    t0 = time.perf_counter()
    results = {}
    suppression = {}
    for method in (KI_DQN, DQN):
        summ = MethodSummary(method, {k: [] for k in ("train_sim", "unseen_sim", "unseen_real",
                                                      "final_train_sim", "final_unseen_sim")})
        for seed in seeds:
            cfg = experiment_config(method, seed, iterations, learner)
            res = train(cfg, keep_snapshots=True)
            top = res.top_iterations(top_k)
            by_iter = {r[0]: float(r[3]) for r in res.metrics}
            scores = {"train_sim": [], "unseen_sim": [], "unseen_real": []}
            for it in top:
                pol = greedy_policy(res.snapshots[it], cfg)
                scores["train_sim"].append(by_iter[it])
                scores["unseen_sim"].append(evaluate_policy(pol, cfg, UNSEEN_WALLS, Regime.SIM, cfg.seed).success_rate)
                scores["unseen_real"].append(evaluate_policy(pol, cfg, UNSEEN_WALLS, Regime.REAL, cfg.seed).success_rate)
            for key, vals in scores.items():
                summ.per_seed[key].append(float(np.mean(vals)))
            final = greedy_policy(res.state.params, cfg)
            summ.per_seed["final_train_sim"].append(by_iter[res.state.iteration])
            summ.per_seed["final_unseen_sim"].append(
                evaluate_policy(final, cfg, UNSEEN_WALLS, Regime.SIM, cfg.seed).success_rate)
            summ.seconds.append(res.seconds)
            suppression.setdefault(method, []).extend(suppression_ratios(res.state.params, cfg))
            if log:
                log(f"  {method} seed {seed}: top-{top_k} iterations {top}, "
                    + ", ".join(f"{k}={v[-1]:.3f}" for k, v in summ.per_seed.items())
                    + f", {res.seconds:.0f}s")
        results[method] = summ
    base_cfg = experiment_config(RANDOM_ON_OBJECT, 0, 0)
    rand = [evaluate_policy(random_on_object_policy(base_cfg.workspace), base_cfg, TRAIN_DIST, Regime.SIM,
                            seed=s).success_rate for s in seeds]
    return Experiment(results, float(np.mean(rand)), suppression, time.perf_counter() - t0)


def criterion_5_learning(exp: Experiment) -> CriterionResult:
    ki = exp.results[KI_DQN]
    sr = ki.mean("train_sim")
    ok = sr >= 0.80 and sr - exp.random_on_object >= 0.25
    detail = (f"KI-DQN train-dist {sr:.3f} +/- {ki.std('train_sim'):.3f} (final checkpoints "
              f"{ki.mean('final_train_sim'):.3f}); random-on-object {exp.random_on_object:.3f}; "
              f"need >= 0.80 and margin >= 0.25; training {sum(ki.seconds):.0f}s for {len(ki.seconds)} seeds")
    return CriterionResult(5, "learning efficacy", ok, detail, exp.seconds)


def criterion_6_generalisation(exp: Experiment) -> CriterionResult:
    ki, dqn = exp.results[KI_DQN], exp.results[DQN]
    gap_sim = ki.mean("unseen_sim") - dqn.mean("unseen_sim")
    gap_real = ki.mean("unseen_real") - dqn.mean("unseen_real")
    ok = gap_sim >= 0.15 and gap_real >= 0.20
    detail = (f"unseen SIM KI {ki.mean('unseen_sim'):.3f} vs DQN {dqn.mean('unseen_sim'):.3f} (gap {gap_sim:+.3f}, "
              f"need >= 0.15); REAL KI {ki.mean('unseen_real'):.3f} vs DQN {dqn.mean('unseen_real'):.3f} "
              f"(gap {gap_real:+.3f}, need >= 0.20)")
    return CriterionResult(6, "generalisation gap", ok, detail, 0.0)


def criterion_7_suppression(exp: Experiment, seed_runs: int = 3, bound: float = 0.10) -> CriterionResult:
    ki = np.asarray(exp.suppression[KI_DQN]).reshape(seed_runs, -1)
    dqn = np.asarray(exp.suppression[DQN]).reshape(seed_runs, -1)
    ki_pass = (ki <= bound).mean(axis=1)
    dqn_fail = (dqn > bound).mean(axis=1)
    ok = bool(np.all(ki_pass == 1.0) and np.all(dqn_fail >= 0.5))
    detail = (f"KI within bound on {ki_pass.round(2).tolist()} of observations per seed "
              f"(median ratio {np.median(ki):.3f}); DQN outside bound on {dqn_fail.round(2).tolist()} "
              f"(median ratio {np.median(dqn):.3f})")
    return CriterionResult(7, "off-object suppression", ok, detail, 0.0)


# --------------------------------------------------------------------------
# 8. determinism and persistence


@_timed(8, "determinism and persistence")
def criterion_8_determinism(iterations: int = 500):
    cfg = experiment_config(KI_DQN, 11, iterations).replace(eval_every=250)
    blobs = []
    with tempfile.TemporaryDirectory() as tmp:
        for run in range(2):
            out = Path(tmp) / f"run{run}"
            train(cfg, out)
            blobs.append((out / f"ckpt_{iterations:06d}.bin").read_bytes())
        ckpt = load_checkpoint(Path(tmp) / "run0" / f"ckpt_{iterations:06d}.bin", expect=cfg)
    again = ckpt.to_bytes()
    same_runs = blobs[0] == blobs[1]
    roundtrip = again == blobs[0] and checkpoint_from_bytes(again).params.checksum() == ckpt.params.checksum()
    return same_runs and roundtrip, (f"identical checkpoints at iteration {iterations}: {same_runs}; "
                                     f"bit-exact round trip: {roundtrip}")


# --------------------------------------------------------------------------


def run_all(quick: bool = False, log=print) -> List[CriterionResult]:
    out = []
    for fn in (criterion_1_gradients, criterion_2_reduction, criterion_3_tabular, criterion_4_physics):
        out.append(fn())
        log(out[-1].line())
    if not quick:
        exp = learning_experiment(log=log)
        for fn in (criterion_5_learning, criterion_6_generalisation, criterion_7_suppression):
            out.append(fn(exp))
            log(out[-1].line())
    out.append(criterion_8_determinism())
    log(out[-1].line())
    return out


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description="run the acceptance criteria")
    ap.add_argument("--quick", action="store_true", help="skip the training experiments (5-7)")
    args = ap.parse_args(argv)
    results = run_all(args.quick)
    n_pass = sum(r.passed for r in results)
    print(f"{n_pass}/{len(results)} criteria passed")
    return 0 if n_pass == len(results) else 1


if __name__ == "__main__":
    raise SystemExit(main())
