"""End-to-end acceptance checks; each test prints a single PASS or FAIL line.

The training-based criteria share one comparison run (three strategies, five
seeds, 200 episodes each), which takes roughly half an hour on one core. Set
``SAFELANE_ACCEPTANCE_DIR`` to keep those runs and reuse them next time.
"""

import itertools
import os
from pathlib import Path

import numpy as np
import pytest

from safelane.agents import TrainConfig, Transition, compute_targets, shaped_q
from safelane.config import ExperimentConfig
from safelane.harness import compare_strategies, read_csv, run_eval, run_training
from safelane.neural import QNetwork, grad_check
from safelane.safety import SafetyConfig, mask_actions
from safelane.sim import detect_collision, make_scene, step_scene

from .oracles import oracle_verdicts, random_test_scene

SEEDS = (0, 1, 2, 3, 4)
EVAL_EPISODES = 20
STRATS = ("traditional", "qmask", "robust_qmask")
BASIC = SafetyConfig()
ROBUST = SafetyConfig(mode="robust")


def experiment(strategy: str, **train) -> ExperimentConfig:
    mode = "robust" if strategy == "robust_qmask" else "basic"
    return ExperimentConfig(
        strategy=strategy,
        train=TrainConfig(strategy=strategy, eval_episodes=EVAL_EPISODES, **train),
        safety=SafetyConfig(mode=mode),
        seeds=SEEDS,
    )


@pytest.fixture(scope="module")
def comparison(tmp_path_factory):
    cached = os.environ.get("SAFELANE_ACCEPTANCE_DIR")
    out = Path(cached) if cached else tmp_path_factory.mktemp("comparison")
    runs = compare_strategies([experiment(s) for s in STRATS], out, reuse=bool(cached))
    return {r.label: r for r in runs}, out


def test_criterion_01_robust_never_collides_in_eval(comparison, criterion):
    runs, _ = comparison
    robust = runs["robust_qmask"]
    total = sum(robust.eval[s].collision_count for s in SEEDS)
    episodes = sum(len(robust.eval[s].rows) for s in SEEDS)
    train = sum(robust.train_collisions[s] for s in SEEDS)
    criterion(
        1,
        total == 0 and episodes == EVAL_EPISODES * len(SEEDS),
        f"robust_qmask eval collisions {total} / {episodes} episodes (training collisions {train})",
    )


def test_criterion_02_mask_matches_oracle(criterion):
    n_scenes = 1000
    agree = 0
    outside_band = 0
    for seed in range(n_scenes):
        scene = random_test_scene(seed)
        m = mask_actions(scene, BASIC)
        verdict, clearance = oracle_verdicts(scene)
        ok = True
        for a, v in verdict.items():
            if v != m.verdict[a]:
                ok = False
                if abs(clearance[a]) > BASIC.margin:
                    outside_band += 1
        agree += ok
    rate = agree / n_scenes
    criterion(
        2,
        rate >= 0.99 and outside_band == 0,
        f"agreement {agree}/{n_scenes} scenes ({rate:.1%}), disagreements outside margin band {outside_band}",
    )


def test_criterion_03_shaped_q_argmax_safe(criterion):
    masks = [np.array(b, dtype=bool) for b in itertools.product((0, 1), repeat=5) if 0 < sum(b) < 5]
    rng = np.random.default_rng(0)
    bad = 0
    for mask in masks:
        q = rng.normal(scale=10.0, size=(10_000, 5))
        out = shaped_q(q, np.broadcast_to(mask, q.shape))
        bad += int(np.sum(~mask[np.argmax(out, axis=1)]))
        bad += int(np.sum(out[:, ~mask].max(axis=1) >= q.min(axis=1)))
    criterion(3, bad == 0, f"{len(masks)} masks x 10000 vectors, violations {bad}")


def test_criterion_04_robust_subset_of_basic(criterion):
    violations = 0
    shrunk = 0
    for seed in range(1000):
        scene = random_test_scene(seed)
        basic = mask_actions(scene, BASIC).safe
        robust = mask_actions(scene, ROBUST).safe
        violations += sum(r and not b for b, r in zip(basic, robust))
        shrunk += basic != robust
    criterion(4, violations == 0, f"1000 scenes, subset violations {violations}, scenes where robust is stricter {shrunk}")


def test_criterion_05_gradients_match_finite_differences(criterion):
    worst = 0.0
    for seed in range(50):
        net = QNetwork(seed=seed)
        rng = np.random.default_rng(1000 + seed)
        x = rng.normal(size=(10, 26))
        a = rng.integers(0, 5, 10)
        t = rng.normal(size=10)
        worst = max(worst, grad_check(net, x, a, t, h=1e-5, n_coords=100, seed=seed).max_rel_error)
    criterion(5, worst < 1e-4, f"50 nets x 10 inputs, max relative error {worst:.2e}")


def test_criterion_06_target_arithmetic(criterion):
    z = np.zeros(26)
    safe = np.ones(5, dtype=bool)
    net = QNetwork((26, 5), seed=0)
    net.weights[0][...] = 0.0
    net.biases[0][...] = [2.0, 1.0, 0.0, -1.0, 0.5]
    terminal = [Transition(z, 0, r, z, True, safe, safe) for r in (-9.5, 0.0, 1.0)]
    exact = all(list(compute_targets(terminal, net, s, 0.99)) == [-9.5, 0.0, 1.0] for s in STRATS)
    t = float(compute_targets([Transition(z, 0, 0.5, z, False, safe, safe)], net, "traditional", 0.99)[0])
    err = abs(t - 2.48)
    criterion(6, exact and err <= 1e-12, f"terminal targets exact {exact}, 0.5 + 0.99*2.0 -> {t!r} (error {err:.1e})")


def test_criterion_07_collision_contrast(comparison, criterion):
    runs, _ = comparison
    trad = {s: runs["traditional"].eval[s].collision_count for s in SEEDS}
    robust = {s: runs["robust_qmask"].eval[s].collision_count for s in SEEDS}
    trad_seeds = sum(c >= 1 for c in trad.values())
    ok = trad_seeds > len(SEEDS) / 2 and all(c == 0 for c in robust.values())
    criterion(
        7,
        ok,
        f"traditional collided in {trad_seeds}/{len(SEEDS)} seeds {list(trad.values())}, "
        f"robust_qmask {list(robust.values())}",
    )


def test_criterion_08_convergence_ordering(comparison, criterion):
    runs, out = comparison
    plateau = {k: [runs[k].plateau[s] for s in SEEDS] for k in STRATS}
    medians = {k: float(np.median([np.inf if p is None else p for p in v])) for k, v in plateau.items()}
    faster = sum(
        r is not None and (t is None or r < t) for r, t in zip(plateau["robust_qmask"], plateau["traditional"])
    )
    print("episodes to plateau per seed:")
    for k in STRATS:
        print(f"  {k:<13} {plateau[k]}  median {medians[k]:g}")
    for row in read_csv(out / "plateau.csv"):
        print(f"  rank seed {row['seed']} {row['strategy']:<13} {row['rank']}")
    ordered = medians["robust_qmask"] < medians["qmask"] < medians["traditional"]
    criterion(
        8,
        faster >= 4,
        f"robust_qmask faster than traditional in {faster}/5 seeds; medians "
        + ", ".join(f"{k}={medians[k]:g}" for k in STRATS)
        + f" (full median ordering {'holds' if ordered else 'does not hold'})",
    )


def test_criterion_09_determinism(tmp_path, criterion):
    files = ("train_log.csv", "summary.csv", "eval.csv", "checkpoint.txt")
    same = True
    for strategy in ("traditional", "robust_qmask"):
        cfg = experiment(strategy, episodes=8)
        for name in ("a", "b"):
            d = tmp_path / strategy / name
            run_training(cfg, 7, d)
            run_eval(cfg, d / "checkpoint.txt", 7, 3, out_path=d / "eval.csv")
        same &= all((tmp_path / strategy / "a" / f).read_bytes() == (tmp_path / strategy / "b" / f).read_bytes() for f in files)
    criterion(9, same, "two runs per strategy with the same config and seed, byte-identical outputs " + str(same))


def test_criterion_10_idm_traffic_is_collision_free(criterion):
    collisions = 0
    for seed in range(100):
        scene = make_scene(np.random.SeedSequence([seed, 10]))
        steps = int(round(40.0 / scene.sim.dt))
        for _ in range(steps):
            scene = step_scene(scene, None)
            if detect_collision(scene)[0]:
                collisions += 1
                break
    criterion(10, collisions == 0, f"100 traffic-only episodes of 40 s, episodes with a collision {collisions}")
