from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimMismatch


@dataclass
class AdamWState:
    lr: float = 0.003
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    exp_avg: list[np.ndarray] = field(default_factory=list)
    exp_avg_sq: list[np.ndarray] = field(default_factory=list)


def adamw_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamWState) -> AdamWState:
    """Apply one AdamW update to ``params`` in place.

    Weight decay is decoupled: parameters shrink by ``lr * weight_decay``
    before the bias-corrected Adam step, independent of the gradient.
    """
    if len(params) != len(grads):
        raise DimMismatch(f"{len(params)} params but {len(grads)} grads")
    if not state.exp_avg:
        state.exp_avg = [np.zeros_like(p) for p in params]
        state.exp_avg_sq = [np.zeros_like(p) for p in params]
    if len(state.exp_avg) != len(params):
        raise DimMismatch(f"optimizer state tracks {len(state.exp_avg)} params, got {len(params)}")
    for p, g, m in zip(params, grads, state.exp_avg):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimMismatch(f"param {p.shape}, grad {g.shape}, moment {m.shape}")

    state.step += 1
    beta1, beta2 = state.betas
    bc1 = 1.0 - beta1 ** state.step
    bc2 = 1.0 - beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.exp_avg, state.exp_avg_sq):
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state
