from typing import Callable, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

# log-scale distance from a bracket end under which a maximizer counts as a boundary hit
BOUNDARY_LOG_TOL = 1e-3


def maximize_on_log_scale(
    func: Callable[[float], float],
    lower: float,
    upper: float,
    xtol: float = 1e-8,
) -> Tuple[float, float, bool]:
    """
    Maximize a unimodal function of a positive scalar over [lower, upper].

    The search runs on log(x) with bounded Brent, so ``xtol`` is a relative tolerance on x.
    Both bracket ends are also evaluated, a monotone objective therefore returns
    the exact bracket end.

    Args:
        func: objective, called with a positive float
        lower: lower end of the bracket, > 0
        upper: upper end of the bracket
        xtol: relative tolerance on the maximizer

    Returns:
        (argmax, max value, True if the argmax sits on a bracket end)
    """
    log_lower, log_upper = np.log(lower), np.log(upper)

    res = minimize_scalar(
        lambda t: -func(float(np.exp(t))),
        bounds=(log_lower, log_upper),
        method="bounded",
        options={"xatol": xtol},
    )
    best_x, best_value = float(np.exp(res.x)), -float(res.fun)

    for end in (lower, upper):
        value = func(end)
        if value > best_value:
            best_x, best_value = end, value

    log_x = np.log(best_x)
    at_boundary = bool(
        log_x - log_lower < BOUNDARY_LOG_TOL or log_upper - log_x < BOUNDARY_LOG_TOL
    )
    return best_x, best_value, at_boundary


def log_mix(log_w: np.ndarray, log_a: np.ndarray, log_b: np.ndarray) -> np.ndarray:
    """
    log(w * exp(log_a) + (1 - w) * exp(log_b)) given log(w), elementwise.

    w may be exactly 0 or 1 (log_w = -inf or 0).
    """
    with np.errstate(divide="ignore"):
        log_1mw = np.log1p(-np.exp(log_w))
    return np.logaddexp(log_w + log_a, log_1mw + log_b)
