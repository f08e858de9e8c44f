"""Shared test helpers."""

from functools import lru_cache


def optimal_code_length(counts) -> int:
    """Brute-force oracle: minimum weighted length over all binary prefix
    codes, found by trying every possible pair-merge sequence.  The total
    cost of a merge sequence equals the weighted external path length of
    the tree it builds."""

    @lru_cache(maxsize=None)
    def best(weights: tuple) -> int:
        if len(weights) == 1:
            return 0
        out = None
        for i in range(len(weights)):
            for j in range(i + 1, len(weights)):
                merged = weights[i] + weights[j]
                rest = tuple(
                    sorted(w for k, w in enumerate(weights) if k not in (i, j))
                    + [merged]
                )
                cost = merged + best(rest)
                if out is None or cost < out:
                    out = cost
        return out

    return best(tuple(sorted(counts)))
