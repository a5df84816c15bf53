"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from typing import Callable, Mapping

from jere.ndcore.tensor import Graph, Tensor, backward, zero_grads


def finite_diff_check(fn: Callable[[Mapping[str, Tensor]], Tensor],
                      params: Mapping[str, Tensor],
                      epsilon: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    `fn` must deterministically map the parameters to a scalar loss tensor
    (dropout disabled); run it on float64 parameters for meaningful bounds.
    Error per coordinate is |analytic - fd| / max(1, |analytic|).
    """
    zero_grads(params.values())
    with Graph() as graph:
        loss = fn(params)
    backward(graph, loss, params.values())
    analytic = {name: p.grad.copy() for name, p in params.items()}

    worst = 0.0
    for name, p in params.items():
        flat = p.data.reshape(-1)
        aflat = analytic[name].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            up = float(fn(params).data)
            flat[j] = orig - epsilon
            down = float(fn(params).data)
            flat[j] = orig
            fd = (up - down) / (2.0 * epsilon)
            err = abs(aflat[j] - fd) / max(1.0, abs(aflat[j]))
            worst = max(worst, err)
    return worst
