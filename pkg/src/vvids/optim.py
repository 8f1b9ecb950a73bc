"""Lion (sign-momentum) optimizer and an AdamW baseline.

Lion keeps a single momentum buffer per parameter and moves every coordinate
by exactly +/-lr (or 0 at a sign tie); AdamW keeps two moment buffers and
rescales per coordinate. Both apply decoupled weight decay inside the update,
with layer-norm parameters and biases exempted by name.
"""

from __future__ import annotations

from typing import Callable, Iterator

import numpy as np

from .errors import ConfigError, DimensionError
from .numerics import Tensor

__all__ = ["lion_step", "adamw_step", "Lion", "AdamW", "make_optimizer",
           "default_decay_filter"]


def _check(param: np.ndarray, grad: np.ndarray, lr: float) -> None:
    if param.shape != grad.shape:
        raise DimensionError(
            f"gradient shape {grad.shape} does not match parameter {param.shape}")
    if lr <= 0:
        raise ConfigError(f"learning rate must be positive, got {lr}")


def lion_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float,
              weight_decay: float = 0.0, beta1: float = 0.9,
              beta2: float = 0.99) -> tuple[np.ndarray, dict]:
    """One Lion update, in place.

    c = beta1*m + (1-beta1)*g, param -= lr*(sign(c) + wd*param),
    m = beta2*m + (1-beta2)*g. sign(0) is 0, so a tied coordinate stays put.
    """
    _check(param, grad, lr)
    if "m" not in state:
        state["m"] = np.zeros_like(param)
    m = state["m"]
    c = beta1 * m + (1.0 - beta1) * grad
    param -= lr * (np.sign(c) + weight_decay * param)
    state["m"] = beta2 * m + (1.0 - beta2) * grad
    return param, state


def adamw_step(param: np.ndarray, grad: np.ndarray, state: dict, lr: float,
               weight_decay: float = 0.0, beta1: float = 0.9,
               beta2: float = 0.999, eps: float = 1e-8) -> tuple[np.ndarray, dict]:
    """One decoupled-weight-decay adaptive-moment update with bias correction."""
    _check(param, grad, lr)
    if eps <= 0:
        raise ConfigError(f"eps must be positive, got {eps}")
    if "m" not in state:
        state["m"] = np.zeros_like(param)
        state["v"] = np.zeros_like(param)
        state["t"] = 0
    state["t"] += 1
    t = state["t"]
    state["m"] = beta1 * state["m"] + (1.0 - beta1) * grad
    state["v"] = beta2 * state["v"] + (1.0 - beta2) * (grad * grad)
    mhat = state["m"] / (1.0 - beta1 ** t)
    vhat = state["v"] / (1.0 - beta2 ** t)
    param -= lr * (mhat / (np.sqrt(vhat) + eps) + weight_decay * param)
    return param, state


def default_decay_filter(name: str) -> bool:
    """Weight decay applies to everything except layer-norm params and biases.

    Memory keys/values, query seeds, and projection weights all decay.
    """
    leaf = name.rsplit(".", 1)[-1]
    return not (leaf.startswith("ln") or leaf.startswith("b"))


class _Optimizer:
    kind = ""
    buffers_per_param = 0

    def __init__(self, params: dict[str, Tensor], lr: float,
                 weight_decay: float = 0.0,
                 decay_filter: Callable[[str], bool] = default_decay_filter):
        if lr <= 0:
            raise ConfigError(f"learning rate must be positive, got {lr}")
        self.params = dict(params)
        self.lr = lr
        self.weight_decay = weight_decay
        self.decay_filter = decay_filter
        self.state: dict[str, dict] = {name: {} for name in self.params}

    def zero_grad(self) -> None:
        for p in self.params.values():
            p.zero_grad()

    def step(self) -> None:
        for name in sorted(self.params):
            p = self.params[name]
            if p.grad is None:
                continue
            wd = self.weight_decay if self.decay_filter(name) else 0.0
            self._update(p.data, p.grad, self.state[name], wd)

    def _update(self, param, grad, state, wd) -> None:
        raise NotImplementedError

    def state_arrays(self) -> Iterator[tuple[str, np.ndarray]]:
        """Named state buffers, for introspection and checkpointing."""
        for name in sorted(self.state):
            for key, val in sorted(self.state[name].items()):
                if isinstance(val, np.ndarray):
                    yield f"{name}.{key}", val

    def state_floats(self) -> int:
        return sum(arr.size for _, arr in self.state_arrays())

    def state_dict(self) -> dict:
        out = {"kind": self.kind, "lr": self.lr, "weight_decay": self.weight_decay,
               "steps": {name: s.get("t", 0) for name, s in self.state.items()}}
        return out

    def load_steps(self, steps: dict) -> None:
        for name, t in steps.items():
            if name in self.state and t:
                self.state[name]["t"] = int(t)


class Lion(_Optimizer):
    kind = "lion"
    buffers_per_param = 1

    def __init__(self, params, lr=1e-4, weight_decay=1e-4, beta1=0.9, beta2=0.99,
                 decay_filter=default_decay_filter):
        super().__init__(params, lr, weight_decay, decay_filter)
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.beta1 = beta1
        self.beta2 = beta2

    def _update(self, param, grad, state, wd):
        lion_step(param, grad, state, self.lr, wd, self.beta1, self.beta2)


class AdamW(_Optimizer):
    kind = "adamw"
    buffers_per_param = 2

    def __init__(self, params, lr=1e-4, weight_decay=1e-4, beta1=0.9, beta2=0.999,
                 eps=1e-8, decay_filter=default_decay_filter):
        super().__init__(params, lr, weight_decay, decay_filter)
        if not (0.0 <= beta1 < 1.0 and 0.0 <= beta2 < 1.0):
            raise ConfigError(f"betas must lie in [0, 1), got {beta1}, {beta2}")
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps

    def _update(self, param, grad, state, wd):
        adamw_step(param, grad, state, self.lr, wd, self.beta1, self.beta2, self.eps)


def make_optimizer(kind: str, params: dict[str, Tensor], lr: float,
                   weight_decay: float) -> _Optimizer:
    if kind == "lion":
        return Lion(params, lr=lr, weight_decay=weight_decay)
    if kind == "adamw":
        return AdamW(params, lr=lr, weight_decay=weight_decay)
    raise ConfigError(f"unknown optimizer {kind!r} (expected 'lion' or 'adamw')")
