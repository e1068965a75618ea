"""GroupDRO baseline: online exponentiated-gradient ascent on group weights."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np


@dataclass(frozen=True)
class GroupDROState:
    groups: tuple[str, ...]
    q: np.ndarray
    running_loss: np.ndarray
    step_size: float = 0.01
    momentum: float = 0.9

    @classmethod
    def initial(cls, groups: Sequence[str], step_size: float = 0.01, momentum: float = 0.9) -> "GroupDROState":
        if step_size < 0:
            raise ValueError("step size must be nonnegative")
        n = len(groups)
        if n == 0:
            raise ValueError("need at least one group")
        return cls(tuple(groups), np.full(n, 1.0 / n), np.full(n, np.nan), step_size, momentum)


def dro_update(state: GroupDROState, observed: Mapping[int, float]) -> GroupDROState:
    """``q_a <- q_a * exp(eta * L_a)``, renormalised, for the observed groups."""
    if not observed:
        return state
    losses = np.zeros(len(state.groups))
    running = state.running_loss.copy()
    for k in sorted(observed):
        loss = float(observed[k])
        if not np.isfinite(loss):
            raise ValueError(f"group {state.groups[k]!r}: loss {loss} is not finite")
        losses[k] = loss
        if np.isnan(running[k]):
            running[k] = loss
        else:
            running[k] = state.momentum * running[k] + (1.0 - state.momentum) * loss
    step = state.step_size * losses
    # unobserved groups get a zero step; shifting by the max avoids overflow
    q = state.q * np.exp(step - step.max())
    q /= q.sum()
    return replace(state, q=q, running_loss=running)


def dro_sample_weights(group_index: np.ndarray, state: GroupDROState) -> np.ndarray:
    """Per-sample weights ``w`` such that ``sum(w * loss)`` is the DRO batch loss."""
    group_index = np.asarray(group_index, dtype=np.intp)
    if group_index.size == 0:
        raise ValueError("empty batch")
    counts = np.bincount(group_index, minlength=len(state.groups))
    present = counts > 0
    mass = state.q * present
    mass = mass / mass.sum()
    return mass[group_index] / counts[group_index]


def dro_batch_loss(losses, group_index, state: GroupDROState) -> float:
    """Sum over present groups of ``q_a * mean loss of group a``.

    Absent groups contribute nothing; q is renormalised over present groups.
    """
    losses = np.asarray(losses, dtype=np.float64)
    weights = dro_sample_weights(group_index, state)
    if losses.shape != weights.shape:
        raise ValueError("one loss per sample required")
    return float(np.sum(weights * losses))
