"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

import numpy as np

from .autodiff import Tape, Tensor


def check_gradients(f, arrays, step: float = 1e-3, max_coords: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    f maps a list of Tensors to a scalar Tensor and must be deterministic.
    The probe runs in float64 so the comparison tests the backward math
    rather than float32 rounding. When max_coords is set, a random subset of
    coordinates per array is checked (for large parameter vectors).
    """
    xs = [np.asarray(a, dtype=np.float64).copy() for a in arrays]
    ts = [Tensor(x.copy(), requires_grad=True) for x in xs]
    with Tape() as tape:
        loss = f(ts)
    tape.backward(loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in ts]

    def eval_at(points):
        out = f([Tensor(p) for p in points])
        return float(out.data)

    worst = 0.0
    for i, x in enumerate(xs):
        flat = x.reshape(-1)
        n = flat.size
        if max_coords is not None and n > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        for j in coords:
            orig = flat[j]
            flat[j] = orig + step
            fp = eval_at(xs)
            flat[j] = orig - step
            fm = eval_at(xs)
            flat[j] = orig
            numeric = (fp - fm) / (2.0 * step)
            a = float(analytic[i].reshape(-1)[j])
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-3)
            if rel > worst:
                worst = rel
    return worst


def check_param_gradients(params, loss_fn, **kwargs) -> float:
    """check_gradients over every entry of a ParamSet.

    loss_fn() must rebuild the scalar loss deterministically; the set's
    parameters are substituted with probe tensors for each evaluation.
    """
    names = params.names()
    arrays = [params[n].data for n in names]

    def f(ts):
        with params.substituted(dict(zip(names, ts))):
            return loss_fn()

    return check_gradients(f, arrays, **kwargs)
