"""Permutation significance testing on replicate score samples."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_BLOCK = 4096


@dataclass(frozen=True)
class PermutationResult:
    """One-sided median-difference permutation test outcome.

    ``observed_stat`` is median(b) - median(a); ``p_value`` carries the
    add-one correction (1 + exceedances) / (1 + rounds), so it is never 0.
    ``significant`` requires both a positive observed difference and
    p_value < alpha.
    """

    observed_stat: float
    p_value: float
    rounds: int
    significant: bool


def permutation_test(
    a: np.ndarray,
    b: np.ndarray,
    rounds: int = 10000,
    alpha: float = 0.05,
    rng: np.random.Generator | None = None,
) -> PermutationResult:
    """Test whether sample b's median exceeds sample a's.

    Pools both samples and redraws group labels (preserving group sizes)
    ``rounds`` times; counts permuted median differences at least as large as
    the observed one. Medians use the midpoint of the two middle values for
    even lengths.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size == 0 or b.size == 0:
        raise ValueError("empty input vectors")
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if rng is None:
        rng = np.random.default_rng()

    observed = float(np.median(b) - np.median(a))
    pool = np.concatenate([a, b])
    n_a = a.size
    exceed = 0
    done = 0
    while done < rounds:
        m = min(_BLOCK, rounds - done)
        perms = rng.permuted(np.tile(pool, (m, 1)), axis=1)
        stats = np.median(perms[:, n_a:], axis=1) - np.median(perms[:, :n_a], axis=1)
        exceed += int(np.count_nonzero(stats >= observed))
        done += m
    p_value = (1 + exceed) / (1 + rounds)
    return PermutationResult(
        observed, p_value, rounds, observed > 0 and p_value < alpha
    )
