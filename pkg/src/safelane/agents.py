"""Batch deep Q-learning with optional safety masking and Q-shaping.

Four strategies share one learner:

* ``traditional``: plain DQN on the speed reward with a collision penalty.
* ``constrained``: DQN on a Lagrangian-penalized speed reward, with the
  multipliers updated by projected dual ascent after every episode.
* ``qmask``: unsafe actions are removed from both greedy and random choice.
* ``robust_qmask``: robust masks, shaped Q-values for action choice and
  targets, and extra regression of unsafe pairs toward a low value.
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from .env import (
    N_ACTIONS,
    HighwayEnv,
    MetaAction,
    RewardConfig,
    admissible_actions,
    reward_speed,
)
from .neural import AdamState, QNetwork, adam_step
from .safety import SafetyConfig, SafetyMask, mask_actions

log = logging.getLogger(__name__)

STRATEGIES = ("traditional", "constrained", "qmask", "robust_qmask")
MASKED = ("qmask", "robust_qmask")


@dataclass(frozen=True)
class Transition:
    """One decision step.

    ``terminal`` marks an absorbing state (a collision). Reaching the episode
    time limit is not terminal: its target still bootstraps from ``s_next``,
    because the observation carries no clock.
    """

    s: np.ndarray
    a: int
    r: float
    s_next: np.ndarray
    terminal: bool
    mask: np.ndarray
    mask_next: np.ndarray


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling with replacement."""

    def __init__(self, capacity: int = 50):
        if capacity < 1:
            raise ValueError("capacity must be at least 1")
        self.capacity = capacity
        self._items: deque[Transition] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self._items)

    def __getitem__(self, i: int) -> Transition:
        return self._items[i]

    def push(self, t: Transition) -> None:
        self._items.append(t)

    def sample(self, n: int, rng: np.random.Generator) -> list[Transition]:
        if not self._items:
            raise ValueError("cannot sample from an empty buffer")
        idx = rng.integers(0, len(self._items), size=n)
        return [self._items[i] for i in idx]


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "traditional"
    gamma: float = 0.99
    alpha: float = 0.01
    batch_size: int = 50
    buffer_capacity: int = 50
    episodes: int = 200
    eval_episodes: int = 20
    iterations_per_update: int = 150
    eps_start: float = 1.0
    eps_end: float = 0.05
    eps_decay_episodes: int = 150
    hidden: tuple[int, ...] = (100, 100)
    eta: float = 0.05
    constraint_bounds: tuple[float, ...] = (0.0, 0.0)
    constraint_kinds: tuple[str, ...] = ("ineq", "ineq")

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must lie in [0, 1]")
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if self.batch_size < 1 or self.buffer_capacity < 1:
            raise ValueError("batch_size and buffer_capacity must be positive")
        if self.batch_size > self.buffer_capacity:
            raise ValueError("batch_size must not exceed buffer_capacity")
        if self.episodes < 0 or self.eval_episodes < 0 or self.iterations_per_update < 0:
            raise ValueError("episode and iteration counts must be non-negative")
        for name in ("eps_start", "eps_end"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.eps_decay_episodes < 0:
            raise ValueError("eps_decay_episodes must be non-negative")
        if not self.hidden or min(self.hidden) < 1:
            raise ValueError("hidden layer sizes must be positive")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if len(self.constraint_bounds) != 2 or len(self.constraint_kinds) != 2:
            raise ValueError("expected one bound and one kind per constraint (leader, follower)")
        if any(k not in ("ineq", "eq") for k in self.constraint_kinds):
            raise ValueError("constraint kinds must be 'ineq' or 'eq'")


def return_bounds(
    strategy: str, reward: RewardConfig, gamma: float, horizon_steps: Optional[int] = None
) -> tuple[float, float]:
    """Interval containing every discounted return the agent can be asked to predict.

    The speed reward lies in ``[0, b]``. Values bootstrap through the episode
    time limit, so by default the upper bound is the infinite-horizon
    ``b / (1 - gamma)``; pass ``horizon_steps`` to bound a fixed number of
    decisions instead. A collision is absorbing, so the collision penalty is
    paid at most once. Lagrangian penalties have no fixed scale, so the
    constrained strategy is only bounded above.
    """
    if horizon_steps is None:
        disc = math.inf if gamma == 1.0 else 1.0 / (1.0 - gamma)
    else:
        disc = horizon_steps if gamma == 1.0 else (1.0 - gamma**horizon_steps) / (1.0 - gamma)
    hi = reward.b * disc
    if strategy == "traditional":
        return -reward.c, hi
    if strategy == "constrained":
        return -math.inf, hi
    return 0.0, hi


def epsilon_at(cfg: TrainConfig, episode: int) -> float:
    """Linear decay from ``eps_start`` to ``eps_end``, constant afterwards."""
    if episode < 0:
        raise ValueError("episode must be non-negative")
    if cfg.eps_decay_episodes == 0 or episode >= cfg.eps_decay_episodes:
        return cfg.eps_end
    frac = episode / cfg.eps_decay_episodes
    return cfg.eps_start + (cfg.eps_end - cfg.eps_start) * frac


def _as_bool(mask: SafetyMask | Sequence[bool] | np.ndarray) -> np.ndarray:
    if isinstance(mask, SafetyMask):
        return mask.as_array()
    arr = np.asarray(mask, dtype=bool)
    if arr.shape[-1] != N_ACTIONS:
        raise ValueError(f"mask must have {N_ACTIONS} entries")
    return arr


def shaped_q(q_raw: np.ndarray, mask: SafetyMask | Sequence[bool] | np.ndarray) -> np.ndarray:
    """Replace unsafe entries by ``min(q_raw) - 1`` (row-wise for batches)."""
    q = np.asarray(q_raw, dtype=float)
    safe = _as_bool(mask)
    if not np.all(safe.any(axis=-1)):
        raise ValueError("mask has no safe action")
    low = q.min(axis=-1, keepdims=True) - 1.0
    return np.where(safe, q, low)


def select_action(
    strategy: str,
    net: QNetwork,
    obs: np.ndarray,
    allowed: SafetyMask | Sequence[bool] | np.ndarray,
    epsilon: float,
    rng: np.random.Generator,
) -> MetaAction:
    """Epsilon-greedy choice among ``allowed`` actions.

    For unmasked strategies ``allowed`` is the admissible set; for masked
    strategies it is the mask's safe set, which filters both branches.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if not 0.0 <= epsilon <= 1.0:
        raise ValueError("epsilon must lie in [0, 1]")
    ok = _as_bool(allowed)
    candidates = np.flatnonzero(ok)
    if candidates.size == 0:
        raise ValueError("no candidate action")
    explore = rng.random() < epsilon
    if explore:
        return MetaAction(int(candidates[rng.integers(candidates.size)]))
    q = net.forward(obs)
    if strategy == "robust_qmask":
        return MetaAction(int(np.argmax(shaped_q(q, ok))))
    return MetaAction(int(candidates[np.argmax(q[candidates])]))


def _next_values(strategy: str, q_next: np.ndarray, mask_next: np.ndarray) -> np.ndarray:
    if strategy in ("traditional", "constrained"):
        return q_next.max(axis=1)
    if strategy == "qmask":
        return np.where(mask_next, q_next, -np.inf).max(axis=1)
    return shaped_q(q_next, mask_next).max(axis=1)


def compute_targets(
    batch: Sequence[Transition], net: QNetwork, strategy: str, gamma: float
) -> np.ndarray:
    """``r`` for terminal transitions, ``r + gamma * max V(s')`` otherwise."""
    if not batch:
        raise ValueError("empty batch")
    r = np.array([t.r for t in batch], dtype=float)
    term = np.array([t.terminal for t in batch], dtype=bool)
    if term.all():
        return r
    s_next = np.stack([t.s_next for t in batch])
    mask_next = np.stack([t.mask_next for t in batch])
    mask_next[term] = True
    v = _next_values(strategy, net.forward(s_next), mask_next)
    return np.where(term, r, r + gamma * v)


@dataclass
class ConstrainedState:
    """Lagrange multipliers for the leader-side and follower-side free-space constraints."""

    lambdas: np.ndarray = field(default_factory=lambda: np.zeros(2))
    eta: float = 0.05
    bounds: np.ndarray = field(default_factory=lambda: np.zeros(2))
    kinds: tuple[str, ...] = ("ineq", "ineq")

    def __post_init__(self) -> None:
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        self.bounds = np.asarray(self.bounds, dtype=float)
        if np.any(self.lambdas < 0):
            raise ValueError("multipliers must be non-negative")
        if not (self.lambdas.shape == self.bounds.shape == (len(self.kinds),)):
            raise ValueError("lambdas, bounds and kinds must have matching lengths")

    def excess(self, values: np.ndarray) -> np.ndarray:
        """Signed constraint excess: ``c - C`` for inequalities, ``|c - C|`` for equalities."""
        d = np.asarray(values, dtype=float) - self.bounds
        return np.array([abs(x) if k == "eq" else x for x, k in zip(d, self.kinds)])


def constraint_values(mask: SafetyMask, action: int) -> np.ndarray:
    """Penetration depth (m) of the predicted ego track into the leader and follower buffers."""
    return np.array([mask.leader_penetration[action], mask.follower_penetration[action]])


def constrained_shaped_reward(r: float, values: np.ndarray, cs: ConstrainedState) -> float:
    """``r - sum(lambda_i * max(0, excess_i))``."""
    pen = np.maximum(0.0, cs.excess(values))
    return float(r - np.dot(cs.lambdas, pen))


def dual_update(cs: ConstrainedState, avg_violation: np.ndarray) -> ConstrainedState:
    """Projected dual ascent step on the multipliers."""
    lam = np.maximum(0.0, cs.lambdas + cs.eta * np.asarray(avg_violation, dtype=float))
    return replace(cs, lambdas=lam)


class Agent:
    """Q-network, optimizer and replay buffer for one training run."""

    def __init__(
        self,
        cfg: TrainConfig,
        seed: int = 0,
        obs_size: int = 26,
        value_bounds: tuple[float, float] = (-math.inf, math.inf),
    ):
        if not value_bounds[0] < value_bounds[1]:
            raise ValueError("value_bounds must be an increasing pair")
        self.cfg = cfg
        self.value_bounds = value_bounds
        self.net = QNetwork((obs_size, *cfg.hidden, N_ACTIONS), seed=seed)
        self.adam = AdamState(lr=cfg.alpha)
        self.buffer = ReplayBuffer(cfg.buffer_capacity)
        self.rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
        self.incidents = 0
        self.q_change = float("nan")

    @property
    def strategy(self) -> str:
        return self.cfg.strategy

    def _regression(self, batch: Sequence[Transition], targets: np.ndarray):
        x = np.stack([t.s for t in batch])
        a = np.array([t.a for t in batch], dtype=int)
        q, cache = self.net.forward(x, return_cache=True)
        rows = np.arange(len(batch))
        err = np.zeros_like(q)
        err[rows, a] = q[rows, a] - targets
        count = len(batch)
        if self.strategy == "robust_qmask":
            safe = np.stack([t.mask for t in batch])
            safe[rows, a] = True
            # Unsafe pairs regress toward one below the lowest safe value of
            # the state (never below the return range); pairs already below
            # that floor contribute nothing.
            floor = np.where(safe, q, np.inf).min(axis=1, keepdims=True) - 1.0
            floor = np.maximum(floor, self.value_bounds[0] - 1.0)
            unsafe = ~safe
            err += np.where(unsafe, np.maximum(0.0, q - floor), 0.0)
            count += int(unsafe.sum())
        loss = float(np.sum(err**2) / count)
        return loss, cache, 2.0 * err / count

    def train_step(self, batch: Sequence[Transition], targets: Optional[np.ndarray] = None) -> float:
        """One Adam update on the squared TD error; returns the loss before the update."""
        if targets is None:
            targets = compute_targets(batch, self.net, self.strategy, self.cfg.gamma)
        loss, cache, grad_out = self._regression(batch, targets)
        if not math.isfinite(loss):
            self.incidents += 1
            log.warning("non-finite loss, update skipped")
            return loss
        grads = self.net.backward(cache, grad_out)
        if not adam_step(self.net, grads, self.adam):
            self.incidents += 1
            log.warning("non-finite gradient, update skipped")
        return loss

    def targets(self, batch: Sequence[Transition], net: Optional[QNetwork] = None) -> np.ndarray:
        """Bootstrapped targets clipped to the range of achievable returns."""
        t = compute_targets(batch, self.net if net is None else net, self.strategy, self.cfg.gamma)
        return np.clip(t, *self.value_bounds)

    def update(self) -> float:
        """Replay updates run at the end of an episode; returns the mean loss.

        Targets for the whole update phase are bootstrapped from a snapshot
        of the network taken when the phase starts. As a convergence
        diagnostic, ``q_change`` is set to the mean squared change of the
        Q-values on the replay states across the phase.
        """
        if not len(self.buffer) or not self.cfg.iterations_per_update:
            self.q_change = float("nan")
            return float("nan")
        frozen = self.net.clone()
        losses = []
        for _ in range(self.cfg.iterations_per_update):
            batch = self.buffer.sample(self.cfg.batch_size, self.rng)
            losses.append(self.train_step(batch, self.targets(batch, frozen)))
        states = np.stack([self.buffer[i].s for i in range(len(self.buffer))])
        diff = self.net.forward(states) - frozen.forward(states)
        self.q_change = float(np.mean(np.sum(diff**2, axis=1)))
        return float(np.mean(losses))


@dataclass
class EpisodeResult:
    total_reward: float
    steps: int
    collision: bool
    time_to_collision: Optional[float]
    reward_before_collision: float
    avg_violation: np.ndarray
    trace: list[dict]


def _admissible_array(env: HighwayEnv) -> np.ndarray:
    ok = np.zeros(N_ACTIONS, dtype=bool)
    ok[[int(a) for a in admissible_actions(env.scene, env.cfg.delta_v)]] = True
    return ok


def run_episode(
    env: HighwayEnv,
    agent: Agent,
    seed: int | np.random.SeedSequence,
    epsilon: float,
    safety: SafetyConfig = SafetyConfig(),
    learn: bool = True,
    cs: Optional[ConstrainedState] = None,
    rng: Optional[np.random.Generator] = None,
) -> EpisodeResult:
    """Play one episode, pushing transitions into the agent's buffer when ``learn``."""
    strategy = agent.strategy
    if strategy == "constrained" and cs is None:
        raise ValueError("constrained strategy needs a ConstrainedState")
    rng = agent.rng if rng is None else rng
    mask_cfg = replace(safety, mode="basic") if strategy in ("qmask", "constrained") else safety
    road, rcfg = env.cfg.road, env.cfg.reward

    def allowed() -> tuple[np.ndarray, Optional[SafetyMask]]:
        if strategy in MASKED or strategy == "constrained":
            m = mask_actions(env.scene, mask_cfg, env.cfg.delta_v)
            return (m.as_array() if strategy in MASKED else _admissible_array(env)), m
        return _admissible_array(env), None

    obs = env.reset(seed).normalized
    ok, mask = allowed()
    total = before = 0.0
    collision = False
    ttc = None
    violations = []
    trace = []
    steps = 0
    while True:
        a = select_action(strategy, agent.net, obs, ok, epsilon, rng)
        res = env.step(a)
        steps += 1
        collided = res.info["collision"]
        if strategy in MASKED:
            r = reward_speed(res.info["ego_v"], rcfg, road)
        elif strategy == "constrained":
            c = constraint_values(mask, a)
            violations.append(cs.excess(c))
            r = constrained_shaped_reward(reward_speed(res.info["ego_v"], rcfg, road), c, cs)
        else:
            r = res.reward
        total += r
        if collided:
            collision = True
            # Reported at the end of the decision period in which it happened.
            ttc = steps * env.cfg.sim.policy_period
        else:
            before += r
        if collided:
            ok_next = np.ones(N_ACTIONS, dtype=bool)
            mask_next = None
        else:
            ok_next, mask_next = allowed()
        if learn:
            agent.buffer.push(Transition(obs, int(a), r, res.obs.normalized, collided, ok, ok_next))
        trace.append(
            {
                "step": steps,
                "action": MetaAction(a).name,
                "reward": r,
                "ego_v": res.info["ego_v"],
                "ego_lane": res.info["ego_lane"],
                "collision": int(collided),
                "terminal": int(res.terminal),
            }
        )
        if res.terminal:
            break
        obs, ok, mask = res.obs.normalized, ok_next, mask_next
    avg = np.mean(violations, axis=0) if violations else np.zeros(2)
    return EpisodeResult(total, steps, collision, ttc, before, avg, trace)
