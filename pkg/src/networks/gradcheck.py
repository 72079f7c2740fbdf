"""Central finite-difference gradient verification."""

from typing import Callable, Dict, Optional, Tuple

import numpy as np

# f() evaluates the loss at the current (in-place) parameter values
LossFn = Callable[[], Tuple[float, Dict[str, np.ndarray]]]


def grad_check(
    f: LossFn,
    params: Dict[str, np.ndarray],
    h: float = 1e-5,
    max_entries: Optional[int] = None,
    seed: int = 0,
) -> float:
    """
    Max relative error between analytic and central-difference gradients.

    Relative error is |a - n| / max(1e-8, |a| + |n|). Parameters are perturbed in
    place and restored.

    Args:
        f: Returns (loss, analytic grads keyed like params)
        params: Live parameter arrays read by f
        h: Finite-difference step
        max_entries: Check at most this many random entries per tensor
        seed: Seed for the entry subsample
    """
    _, analytic = f()
    analytic = {k: np.array(v, copy=True) for k, v in analytic.items()}
    rng = np.random.default_rng(seed)

    worst = 0.0
    for name, p in params.items():
        indices = list(np.ndindex(p.shape))
        if max_entries is not None and len(indices) > max_entries:
            picks = rng.choice(len(indices), size=max_entries, replace=False)
            indices = [indices[i] for i in sorted(picks)]
        for idx in indices:
            original = p[idx]
            p[idx] = original + h
            f_plus = f()[0]
            p[idx] = original - h
            f_minus = f()[0]
            p[idx] = original

            numeric = (f_plus - f_minus) / (2.0 * h)
            a = float(analytic[name][idx])
            err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
            worst = max(worst, err)
    return worst
