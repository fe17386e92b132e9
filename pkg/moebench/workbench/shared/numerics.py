""" Numeric helpers shared by the workbench modules. """

import numpy as np
from scipy.special import softmax


# Bit generator behind every seeded stream in the workbench
RNG_ALGORITHM = "PCG64"

SEED_MODULUS = 2**64


def seed_entropy(seed: int) -> int:
    """ Maps any integer seed, negative ones included, onto [0, 2**64). """
    return int(seed) % SEED_MODULUS


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed_entropy(seed)))


def derive_seed(root: int, *stream: int) -> int:
    """
    Derives an independent 63-bit seed for a named stream, e.g. (step, layer).

    Streams are keyed by value, so evaluating layers or steps in a different
    order never reorders randomness.
    """
    sequence = np.random.SeedSequence(entropy=seed_entropy(root), spawn_key=tuple(seed_entropy(s) for s in stream))
    return int(sequence.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def stable_softmax(logits: np.ndarray, axis: int = -1) -> np.ndarray:
    """ Max-subtracted softmax (scipy shifts by the row maximum). """
    return softmax(logits, axis=axis)


def max_relative_error(actual: np.ndarray, expected: np.ndarray) -> float:
    """
    Largest absolute deviation scaled by the largest magnitude of either array.
    """
    scale = max(float(np.max(np.abs(actual), initial=0.0)), float(np.max(np.abs(expected), initial=0.0)), 1e-12)
    return float(np.max(np.abs(actual - expected), initial=0.0)) / scale
