"""
Central finite differences, the oracle for the analytic gradients.
"""

from typing import Callable, Optional, Sequence
import numpy as np


def finite_diff_grad(
    loss: Callable[[np.ndarray], float],
    parameters: np.ndarray | float,
    h: float = 1e-5,
    coordinates: Optional[Sequence[int]] = None,
) -> np.ndarray:
    """
    (loss(theta + h e_i) - loss(theta - h e_i)) / 2h per coordinate.

    `loss` receives a perturbed copy of the parameters. With `coordinates`
    (flat indices) only those entries are estimated and returned as a 1-D
    array; otherwise the full gradient is returned in the parameters' shape.
    """
    shape = np.shape(parameters)
    flat = np.array(parameters, dtype=np.float64).reshape(-1)
    indices = range(flat.size) if coordinates is None else coordinates
    estimates = np.zeros(len(indices))

    for n, i in enumerate(indices):
        original = flat[i]
        flat[i] = original + h
        plus = loss(flat.reshape(shape).copy())
        flat[i] = original - h
        minus = loss(flat.reshape(shape).copy())
        flat[i] = original
        estimates[n] = (plus - minus) / (2 * h)

    if coordinates is None:
        return estimates.reshape(shape)
    return estimates


def sample_coordinates(rng: np.random.Generator, size: int, count: int) -> np.ndarray:
    """ Up to `count` distinct flat indices. """
    return rng.choice(size, size=min(size, count), replace=False)
