"""Finite-difference verification of analytic gradients.

The checker perturbs randomly chosen parameter coordinates and compares the
central difference against the gradient produced by backward(). Probing runs
in float64 copies of the parameters by default: the model trains in float32,
but float32 loss evaluations carry too much rounding noise for a meaningful
h=1e-3 central difference.
"""

from __future__ import annotations

import numpy as np

from ddep.errors import GradCheckError, InvalidArgumentError
from ddep.nn.optim import ParamSet


def grad_check(loss_fn, params: ParamSet, probes=50, h=1e-3, rng=None, dtype=np.float64):
    """Return the worst relative error over `probes` random coordinates.

    loss_fn maps the ParamSet to a scalar Tensor and must be deterministic;
    the checker verifies that by evaluating the unperturbed loss twice.
    """
    if probes <= 0:
        raise InvalidArgumentError(f"probes must be positive, got {probes}")
    rng = rng if rng is not None else np.random.default_rng(0)

    original = {name: p.data for name, p in params.items()}
    if dtype is not None:
        for name, p in params.items():
            p.data = p.data.astype(dtype)

    try:
        base = loss_fn(params)
        repeat = float(loss_fn(params).data)
        if float(base.data) != repeat:
            raise GradCheckError(
                f"loss_fn is not deterministic: {float(base.data)!r} != {repeat!r}"
            )
        params.zero_grad()
        base = loss_fn(params)
        base.backward()
        analytic = {
            name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
            for name, p in params.items()
            if p.trainable
        }

        names = sorted(analytic)
        if not names:
            raise GradCheckError("no trainable parameters to probe")
        worst = 0.0
        for _ in range(probes):
            name = names[int(rng.integers(len(names)))]
            p = params[name]
            idx = int(rng.integers(p.data.size))
            flat = p.data.reshape(-1)
            x0 = flat[idx]
            flat[idx] = x0 + h
            lo_hi = float(loss_fn(params).data)
            flat[idx] = x0 - h
            lo_lo = float(loss_fn(params).data)
            flat[idx] = x0
            fd = (lo_hi - lo_lo) / (2.0 * h)
            a = float(analytic[name].reshape(-1)[idx])
            denom = max(abs(fd), abs(a), 1e-8)
            worst = max(worst, abs(fd - a) / denom)
        return worst
    finally:
        for name, p in params.items():
            p.data = original[name]
        params.zero_grad()
