"""Fully connected ELU Q-network with manual backpropagation and Adam."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

DEFAULT_DIMS = (26, 100, 100, 5)
CHECKPOINT_VERSION = 1


def elu(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


def elu_grad(x: np.ndarray) -> np.ndarray:
    return np.where(x > 0, 1.0, np.exp(np.minimum(x, 0.0)))


@dataclass
class ForwardCache:
    inputs: list[np.ndarray]
    preacts: list[np.ndarray]


class QNetwork:
    """Multilayer perceptron mapping an observation to one Q-value per action.

    Hidden layers use ELU, the output layer is linear. Weights are stored as
    ``(fan_in, fan_out)`` matrices and everything is float64.
    """

    def __init__(self, dims: Sequence[int] = DEFAULT_DIMS, seed: int | None = 0):
        dims = tuple(int(d) for d in dims)
        if len(dims) < 2 or min(dims) < 1:
            raise ValueError(f"invalid layer sizes {dims}")
        self.dims = dims
        rng = np.random.default_rng(seed)
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            limit = np.sqrt(6.0 / (fan_in + fan_out))
            self.weights.append(rng.uniform(-limit, limit, size=(fan_in, fan_out)))
            self.biases.append(np.zeros(fan_out))

    @property
    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params)

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x2 = x[None, :] if single else x
        if x2.ndim != 2 or x2.shape[1] != self.dims[0]:
            raise ValueError(f"expected input width {self.dims[0]}, got shape {x.shape}")
        if not np.all(np.isfinite(x2)):
            raise ValueError("input contains non-finite values")
        return x2

    def forward(self, x: np.ndarray, return_cache: bool = False):
        """Q-values for a single observation or a batch."""
        single = np.asarray(x).ndim == 1
        h = self._check_input(x)
        inputs, preacts = [], []
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            inputs.append(h)
            z = h @ w + b
            preacts.append(z)
            h = z if i == last else elu(z)
        out = h[0] if single else h
        if return_cache:
            return out, ForwardCache(inputs, preacts)
        return out

    __call__ = forward

    def backward(self, cache: ForwardCache, grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` w.r.t. ``params`` (same order)."""
        g = np.asarray(grad_out, dtype=float)
        if g.ndim == 1:
            g = g[None, :]
        grads: list[np.ndarray] = []
        for i in range(len(self.weights) - 1, -1, -1):
            if i != len(self.weights) - 1:
                g = g * elu_grad(cache.preacts[i])
            grads.append(g.sum(axis=0))
            grads.append(cache.inputs[i].T @ g)
            g = g @ self.weights[i].T
        grads.reverse()
        return grads

    def loss_and_grads(
        self, x: np.ndarray, actions: np.ndarray, targets: np.ndarray
    ) -> tuple[float, list[np.ndarray]]:
        """Mean squared TD error on the chosen actions and its gradients."""
        q, cache = self.forward(np.atleast_2d(x), return_cache=True)
        actions = np.asarray(actions, dtype=int)
        targets = np.asarray(targets, dtype=float)
        n = q.shape[0]
        err = q[np.arange(n), actions] - targets
        loss = float(np.mean(err**2))
        grad_out = np.zeros_like(q)
        grad_out[np.arange(n), actions] = 2.0 * err / n
        return loss, self.backward(cache, grad_out)

    def clone(self) -> "QNetwork":
        other = QNetwork.__new__(QNetwork)
        other.dims = self.dims
        other.weights = [w.copy() for w in self.weights]
        other.biases = [b.copy() for b in self.biases]
        return other

    def flat(self) -> np.ndarray:
        return np.concatenate([p.ravel() for p in self.params])

    def save(self, path: str | Path, step: int = 0) -> None:
        save_checkpoint(self, path, step)

    @classmethod
    def load(cls, path: str | Path) -> "QNetwork":
        return load_checkpoint(path)[0]


@dataclass
class AdamState:
    lr: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.lr > 0:
            raise ValueError("learning rate must be positive")


def adam_step(net: QNetwork, grads: Sequence[np.ndarray], state: AdamState) -> bool:
    """One Adam update in place.

    Returns ``False`` and leaves the parameters untouched if any gradient is
    non-finite.
    """
    params = net.params
    if len(grads) != len(params):
        raise ValueError("gradient list does not match parameters")
    if not all(np.all(np.isfinite(g)) for g in grads):
        return False
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    state.t += 1
    c1 = 1.0 - state.beta1**state.t
    c2 = 1.0 - state.beta2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return True


@dataclass(frozen=True)
class GradCheckResult:
    max_rel_error: float
    n_checked: int
    passed: bool


def grad_check(
    net: QNetwork,
    x: np.ndarray,
    actions: np.ndarray,
    targets: np.ndarray,
    h: float = 1e-6,
    tol: float = 1e-4,
    n_coords: int = 200,
    seed: int = 0,
    coords: Optional[Sequence[tuple[int, tuple[int, ...]]]] = None,
    backward: Optional[Callable[[QNetwork, np.ndarray, np.ndarray, np.ndarray], list]] = None,
) -> GradCheckResult:
    """Compare analytic gradients with central finite differences.

    ``coords`` lists ``(param_index, element_index)`` pairs; by default a
    random subset of ``n_coords`` elements is used. ``backward`` can replace
    the analytic gradient routine (useful to confirm the check catches bugs).
    """
    backward = backward or (lambda n, a, b, c: n.loss_and_grads(a, b, c)[1])
    analytic = backward(net, x, actions, targets)
    params = net.params
    if coords is None:
        rng = np.random.default_rng(seed)
        sizes = np.array([p.size for p in params])
        flat_idx = rng.choice(sizes.sum(), size=min(n_coords, int(sizes.sum())), replace=False)
        offsets = np.concatenate([[0], np.cumsum(sizes)])
        coords = []
        for f in flat_idx:
            k = int(np.searchsorted(offsets, f, side="right") - 1)
            coords.append((k, np.unravel_index(int(f - offsets[k]), params[k].shape)))
    worst = 0.0
    for k, idx in coords:
        p = params[k]
        old = p[idx]
        p[idx] = old + h
        up = net.loss_and_grads(x, actions, targets)[0]
        p[idx] = old - h
        down = net.loss_and_grads(x, actions, targets)[0]
        p[idx] = old
        num = (up - down) / (2 * h)
        a = float(analytic[k][idx])
        rel = abs(a - num) / max(abs(a), abs(num), 1e-6)
        worst = max(worst, rel)
    return GradCheckResult(worst, len(coords), worst <= tol)


def save_checkpoint(net: QNetwork, path: str | Path, step: int = 0) -> None:
    """Plain-text checkpoint; values are written with ``repr`` so loading is exact."""
    lines = [
        f"version {CHECKPOINT_VERSION}",
        "dims " + " ".join(str(d) for d in net.dims),
        "activation elu",
        f"step {int(step)}",
    ]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"layer {i} weight {w.shape[0]} {w.shape[1]}")
        lines.extend(" ".join(repr(float(v)) for v in row) for row in w)
        lines.append(f"layer {i} bias {b.shape[0]}")
        lines.append(" ".join(repr(float(v)) for v in b))
    Path(path).write_text("\n".join(lines) + "\n")


def load_checkpoint(path: str | Path) -> tuple[QNetwork, int]:
    lines = Path(path).read_text().splitlines()
    try:
        head = dict(line.split(" ", 1) for line in lines[:4])
        if int(head["version"]) != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {head['version']}")
        if head["activation"] != "elu":
            raise ValueError(f"unsupported activation {head['activation']}")
        dims = tuple(int(d) for d in head["dims"].split())
        step = int(head["step"])
        net = QNetwork(dims, seed=None)
        pos = 4
        for i in range(len(dims) - 1):
            rows, cols = (int(v) for v in lines[pos].split()[3:5])
            if (rows, cols) != (dims[i], dims[i + 1]):
                raise ValueError(f"layer {i} weight shape mismatch")
            net.weights[i] = np.array(
                [[float(v) for v in lines[pos + 1 + r].split()] for r in range(rows)]
            ).reshape(rows, cols)
            pos += rows + 1
            n = int(lines[pos].split()[3])
            if n != dims[i + 1]:
                raise ValueError(f"layer {i} bias shape mismatch")
            net.biases[i] = np.array([float(v) for v in lines[pos + 1].split()]).reshape(n)
            pos += 2
    except (KeyError, IndexError) as exc:
        raise ValueError(f"malformed checkpoint {path}") from exc
    return net, step
