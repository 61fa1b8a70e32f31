"""Shared backtracking gradient-descent core.

Both the full-chain trainer and the post-escape descent search run the same
loop: steepest descent on a chosen subset of layers with Armijo
backtracking, strictly monotone by construction, single-threaded and
deterministic.  Kept separate so the two callers cannot drift apart.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .network import ConvexLoss

__all__ = ["GDResult", "armijo_gd"]

STATUS_CRITICAL = "stalled-critical"
STATUS_BUDGET = "budget-exhausted"
STATUS_LINE_SEARCH = "line-search-stalled"


@dataclass
class GDResult:
    factors: list[np.ndarray]
    loss: float
    status: str
    steps: int
    max_grad: float


def _grads(
    factors: Sequence[np.ndarray], in_width: int, loss: ConvexLoss
) -> tuple[list[np.ndarray], float]:
    """Layer gradients of the composite loss plus its value, from raw arrays.

    Same prefix/suffix formula as ``network.layer_gradients``; duplicated
    here on purpose so the inner loop avoids per-step chain construction.
    """
    k = len(factors)
    below = [np.eye(in_width)]
    for m in factors:
        below.append(m @ below[-1])
    above = [None] * (k + 1)
    above[k] = np.eye(factors[-1].shape[0])
    for i in range(k - 1, -1, -1):
        above[i] = above[i + 1] @ factors[i]
    grad = loss.gradient(below[k])
    layer = [above[i].T @ grad @ below[i - 1].T for i in range(1, k + 1)]
    return layer, loss.value(below[k])


def _value(factors: Sequence[np.ndarray], loss: ConvexLoss) -> float:
    product = factors[0]
    for m in factors[1:]:
        product = m @ product
    return loss.value(product)


def armijo_gd(
    factors: Sequence[np.ndarray],
    in_width: int,
    loss: ConvexLoss,
    active_layers: Sequence[int],
    max_steps: int,
    stop_grad_tol: float,
    armijo_c: float = 1e-4,
    backtrack: float = 0.5,
    step_init: float = 1.0,
    step_grow: float = 2.0,
    min_step: float = 1e-18,
    on_state: Callable[[int, list[np.ndarray], float, float], None] | None = None,
) -> GDResult:
    """Steepest descent with Armijo backtracking on selected layers.

    ``active_layers`` holds 1-based layer numbers; the rest stay frozen.
    The accepted step size carries over between iterations (grown by
    ``step_grow`` before each line search) so the loop adapts to the local
    scale.  ``on_state`` is invoked with ``(step, factors, loss, max_grad)``
    for the initial state (step 0) and after every accepted step.

    Stops with status ``stalled-critical`` when the largest active-layer
    gradient norm drops to ``stop_grad_tol``, ``budget-exhausted`` after
    ``max_steps`` accepted steps, or ``line-search-stalled`` when no step
    above ``min_step`` achieves the Armijo decrease.
    """
    if not active_layers:
        raise ValueError("active_layers must be non-empty")
    active = sorted(set(int(i) for i in active_layers))
    if active[0] < 1 or active[-1] > len(factors):
        raise ValueError(f"active layers {active} out of range 1..{len(factors)}")

    current = [np.array(m, dtype=np.float64) for m in factors]
    grads, value = _grads(current, in_width, loss)
    max_grad = max(float(np.linalg.norm(grads[i - 1])) for i in active)
    if on_state is not None:
        on_state(0, current, value, max_grad)

    t = step_init
    steps = 0
    status = STATUS_BUDGET
    while steps < max_steps:
        if max_grad <= stop_grad_tol:
            status = STATUS_CRITICAL
            break
        squared = sum(float(np.sum(grads[i - 1] ** 2)) for i in active)
        t = min(t * step_grow, 1e12)
        accepted = None
        while t >= min_step:
            trial = list(current)
            for i in active:
                trial[i - 1] = current[i - 1] - t * grads[i - 1]
            trial_value = _value(trial, loss)
            if trial_value <= value - armijo_c * t * squared:
                accepted = (trial, trial_value)
                break
            t *= backtrack
        if accepted is None:
            status = STATUS_LINE_SEARCH
            break
        current, value = accepted
        grads, _ = _grads(current, in_width, loss)
        steps += 1
        max_grad = max(float(np.linalg.norm(grads[i - 1])) for i in active)
        if on_state is not None:
            on_state(steps, current, value, max_grad)
    else:
        status = STATUS_BUDGET
    if max_grad <= stop_grad_tol:
        status = STATUS_CRITICAL
    return GDResult(
        factors=current, loss=value, status=status, steps=steps, max_grad=max_grad
    )
