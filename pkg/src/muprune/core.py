"""Deterministic numeric substrate for the rest of the package.

All floating point data is 64-bit. Random streams use numpy's PCG64
generator exclusively, and every consumer receives an explicit
``Generator`` handle rather than touching module-level state, so a run
is a pure function of its seeds. ``derive_seed`` gives collision-safe
seed splitting for replicas and repetitions.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeMismatchError

__all__ = [
    "make_rng",
    "derive_seed",
    "derive_rng",
    "matmul",
    "reduce_std",
    "sample_minibatch",
]


def make_rng(seed: int) -> np.random.Generator:
    """Create a PCG64-backed generator from an integer seed."""
    return np.random.Generator(np.random.PCG64(int(seed)))


def derive_seed(seed: int, *path: int) -> int:
    """Mix ``seed`` with an index path into a fresh 64-bit seed.

    The result depends only on ``(seed, path)``, never on draw order, so
    replica r of repetition k always sees the same stream no matter what
    ran before it.
    """
    ss = np.random.SeedSequence([int(seed)] + [int(p) for p in path])
    return int(ss.generate_state(1, np.uint64)[0])


def derive_rng(seed: int, *path: int) -> np.random.Generator:
    """Shorthand for ``make_rng(derive_seed(seed, *path))``."""
    return make_rng(derive_seed(seed, *path))


def matmul(a, b) -> np.ndarray:
    """Matrix product of two rank-2 arrays with explicit shape checking.

    Raises
    ------
    ShapeMismatchError
        If either operand is not rank 2 or the inner dimensions differ.
        The message names both shapes.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeMismatchError(
            f"matmul expects rank-2 operands, got shapes {a.shape} and {b.shape}"
        )
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatchError(
            f"cannot multiply {a.shape} by {b.shape}: inner dimensions "
            f"{a.shape[1]} and {b.shape[0]} differ"
        )
    return a @ b


def reduce_std(values, divisor_mode: str = "sample") -> float:
    """Standard deviation of a collection of scalars.

    ``divisor_mode`` selects the denominator: ``"population"`` divides by
    n, ``"sample"`` by n - 1. Population mode accepts a single value
    (the spread of one observation is zero); sample mode needs two.
    """
    v = np.asarray(values, dtype=np.float64).ravel()
    if divisor_mode == "population":
        if v.size < 1:
            raise ValueError("reduce_std: population mode needs at least 1 value")
        ddof = 0
    elif divisor_mode == "sample":
        if v.size < 2:
            raise ValueError(
                f"reduce_std: sample mode needs at least 2 values, got {v.size}"
            )
        ddof = 1
    else:
        raise ValueError(f"unknown divisor_mode {divisor_mode!r}")
    return float(np.std(v, ddof=ddof))


def sample_minibatch(
    rng: np.random.Generator,
    n: int,
    batch: int,
    with_replacement: bool = False,
) -> np.ndarray:
    """Draw ``batch`` indices from ``range(n)``.

    Without replacement the draw is a uniform subset (a full permutation
    when ``batch == n``, which is how epoch shuffles are produced). With
    replacement the indices are iid uniform, which is what Efron
    resampling wants.
    """
    n = int(n)
    batch = int(batch)
    if n < 1:
        raise ValueError(f"sample_minibatch: need a positive population, got n={n}")
    if batch < 1:
        raise ValueError(f"sample_minibatch: batch must be positive, got {batch}")
    if with_replacement:
        return rng.integers(0, n, size=batch, dtype=np.int64)
    if batch > n:
        raise ValueError(
            f"sample_minibatch: cannot draw {batch} from {n} without replacement"
        )
    return rng.permutation(n)[:batch].astype(np.int64, copy=False)
