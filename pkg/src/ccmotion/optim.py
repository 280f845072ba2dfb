"""RMSProp with the step-rate schedule used for motion training.

Plain RMSProp, no momentum: per-parameter second-moment accumulator
    v <- rho * v + (1 - rho) * g^2
    p <- p - lr * g / (sqrt(v) + eps)
The learning rate starts at 1e-4 and halves every ``period`` epochs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class TrainingDiverged(RuntimeError):
    """Raised when a gradient or loss stops being finite."""


@dataclass
class RmsPropState:
    """Second-moment accumulators keyed like the parameter dict."""

    rho: float = 0.99
    eps: float = 1e-8
    v: dict[str, np.ndarray] = field(default_factory=dict)


def rmsprop_step(params: dict[str, np.ndarray],
                 grads: dict[str, np.ndarray],
                 state: RmsPropState,
                 lr: float) -> None:
    """One in-place RMSProp update over every named parameter.

    Parameters missing from ``grads`` are an error; a non-finite
    gradient aborts before any parameter is touched so a diverged step
    never half-applies.
    """
    missing = set(params) - set(grads)
    if missing:
        raise KeyError(f"gradients missing for parameters: {sorted(missing)}")
    for name, g in grads.items():
        if name not in params:
            raise KeyError(f"gradient for unknown parameter {name!r}")
        if not np.all(np.isfinite(g)):
            raise TrainingDiverged(f"non-finite gradient for {name!r}")
    for name, p in params.items():
        g = grads[name]
        acc = state.v.get(name)
        if acc is None:
            acc = np.zeros_like(p)
            state.v[name] = acc
        acc *= state.rho
        acc += (1.0 - state.rho) * g * g
        p -= lr * g / (np.sqrt(acc) + state.eps)


def lr_schedule(epoch: int, *, initial: float = 1e-4, decay: float = 0.5,
                period: int = 500) -> float:
    """Stepwise-decayed learning rate: initial * decay^floor(epoch/period)."""
    if epoch < 0:
        raise ValueError("epoch must be non-negative")
    if period < 1:
        raise ValueError("period must be >= 1")
    return initial * decay ** (epoch // period)
