from dataclasses import dataclass, field

import numpy as np

PAPER_LR = 1e-5
PAPER_WEIGHT_DECAY = 0.01


@dataclass
class OptimState:
    lr: float = PAPER_LR
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = PAPER_WEIGHT_DECAY
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params, grads, state):
    """Apply one AdamW update in place and return ``params``.

    Weight decay is decoupled: it shrinks the parameter directly rather
    than being added to the gradient. Only names present in ``grads`` move.
    """
    for name, g in grads.items():
        if params[name].shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape "
                             f"{params[name].shape} for {name!r}")
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, g in grads.items():
        p = params[name]
        m = state.m.get(name)
        if m is None:
            m = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m = b1 * m + (1.0 - b1) * g
        v = b2 * v + (1.0 - b2) * g * g
        state.m[name], state.v[name] = m, v
        theta = p.data
        if state.weight_decay:
            theta = theta - state.lr * state.weight_decay * theta
        p.data = theta - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params
