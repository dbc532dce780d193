"""Finite-difference verification oracle for tape gradients.

Runs the checked function in whatever dtype the point carries; callers use
float64 points so the comparison is meaningful at 1e-5 relative error.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tape, Tensor


def finite_difference_check(
    function: Callable[[Tensor], Tensor],
    point: Tensor,
    epsilon: float = 1e-4,
    coordinates: Sequence[int] | None = None,
) -> float:
    """Max relative error between tape gradient and central differences.

    Per coordinate i: |analytic_i - cd_i| / max(|analytic_i|, |cd_i|, 1e-8),
    cd_i = (f(x + eps e_i) - f(x - eps e_i)) / (2 eps).  `coordinates`
    restricts the scan to a subset of flat indices (the analytic gradient is
    still the full tape gradient).
    """
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    x0 = Tensor(point.data.copy(), requires_grad=True)
    with Tape() as tape:
        loss = function(x0)
    analytic = tape.gradients(loss, [x0])[0].data.reshape(-1)

    # No tape is active here, so these evaluations record nothing; functions
    # that internally differentiate may open their own scratch tape.
    flat = point.data.reshape(-1)
    idx = range(flat.size) if coordinates is None else coordinates
    worst = 0.0
    for i in idx:
        bumped = flat.copy()
        bumped[i] = flat[i] + epsilon
        f_plus = function(Tensor(bumped.reshape(point.shape))).item()
        bumped[i] = flat[i] - epsilon
        f_minus = function(Tensor(bumped.reshape(point.shape))).item()
        cd = (f_plus - f_minus) / (2.0 * epsilon)
        err = abs(analytic[i] - cd) / max(abs(analytic[i]), abs(cd), 1e-8)
        worst = max(worst, err)
    return worst
