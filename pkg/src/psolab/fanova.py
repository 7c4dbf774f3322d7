"""Variance decomposition of performance over module subsets (orders 1-3).

The pure effect of a subset U is its marginal expectation minus every pure
effect of a proper sub-subset; the importance of U is the variance of that
pure effect over U's level grid divided by the total prediction variance.
`decompose` estimates the terms through the forest surrogate; for complete
factorial tables `exact_decompose` computes them directly from the table and
serves as the surrogate's oracle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations, product

import numpy as np

from .forest import ForestParams, SurrogateForest, fit_forest, marginal_table

__all__ = [
    "EffectVector",
    "DegenerateDatasetError",
    "IncompleteGridError",
    "decompose",
    "decompose_forest",
    "exact_decompose",
    "subset_variance",
    "marginal_performance",
    "cumulative_curve",
    "write_effect_vector",
    "read_effect_vector",
    "write_marginal_tables",
]

_DEGENERATE_EPS = 1e-20


class DegenerateDatasetError(ValueError):
    """All targets (or all predictions) coincide; importances are undefined."""


class IncompleteGridError(ValueError):
    """exact_decompose needs every level combination exactly once."""


@dataclass(frozen=True)
class EffectVector:
    """Ordered variance contributions: mains, then pairs, then triples."""

    feature_names: tuple[str, ...]
    terms: tuple[tuple[tuple[str, ...], float], ...]
    residual: float
    total_variance: float
    max_order: int

    def importances(self) -> np.ndarray:
        return np.array([imp for _, imp in self.terms])

    def term_labels(self) -> list[str]:
        return ["+".join(subset) for subset, _ in self.terms]

    def as_dict(self) -> dict[tuple[str, ...], float]:
        return {subset: imp for subset, imp in self.terms}


def _canonical_subsets(n_features: int, max_order: int):
    for order in range(1, min(max_order, n_features) + 1):
        yield from combinations(range(n_features), order)


def _pure_tables(marginal_fn, subsets):
    """Pure-effect tables via g_U = marginal_U - proper-subset pure effects - g_0.

    `subsets` must be closed under taking sub-subsets and ordered by size.
    """
    g0 = float(marginal_fn(()))
    pure = {(): g0}
    for u in subsets:
        table = np.array(marginal_fn(u), dtype=float) - g0
        for k in range(1, len(u)):
            for w in combinations(u, k):
                axes = tuple(i for i, f in enumerate(u) if f not in w)
                table -= np.expand_dims(pure[w], axes)
        pure[u] = table
    return pure, g0


def _effect_vector(feature_names, marginal_fn, level_sizes, total_variance, max_order):
    if total_variance <= _DEGENERATE_EPS:
        raise DegenerateDatasetError(
            f"total variance {total_variance:.3e} is zero; importances undefined"
        )
    subsets = list(_canonical_subsets(len(level_sizes), max_order))
    pure, _ = _pure_tables(marginal_fn, subsets)
    terms = []
    for u in subsets:
        v_u = float(np.var(pure[u]))
        names = tuple(feature_names[i] for i in u)
        terms.append((names, v_u / total_variance))
    covered = sum(imp for _, imp in terms)
    return EffectVector(
        feature_names=tuple(feature_names),
        terms=tuple(terms),
        residual=max(0.0, 1.0 - covered),
        total_variance=total_variance,
        max_order=max_order,
    )


def subset_variance(forest: SurrogateForest, subset) -> float:
    """Variance contribution V_U of one module subset (unnormalized)."""
    positions = tuple(sorted(forest.feature_names.index(n) for n in subset))
    if not positions:
        return 0.0

    def marginal_fn(u):
        return marginal_table(forest, tuple(forest.feature_names[i] for i in u))

    subsets = [
        w for k in range(1, len(positions) + 1) for w in combinations(positions, k)
    ]
    pure, _ = _pure_tables(marginal_fn, subsets)
    return float(np.var(pure[positions]))


def _forest_total_variance(forest: SurrogateForest) -> float:
    grid = np.array(list(product(*(range(s) for s in forest.level_sizes))), dtype=np.int64)
    return float(np.var(forest.predict(grid)))


def decompose_forest(forest: SurrogateForest, max_order: int = 3) -> EffectVector:
    """Effect vector from a fitted surrogate."""

    def marginal_fn(u):
        return marginal_table(forest, tuple(forest.feature_names[i] for i in u))

    return _effect_vector(
        forest.feature_names,
        marginal_fn,
        forest.level_sizes,
        _forest_total_variance(forest),
        max_order,
    )


def decompose(dataset, max_order: int = 3, params: ForestParams = ForestParams()) -> EffectVector:
    """Fit the surrogate on the dataset and decompose its prediction variance."""
    return decompose_forest(fit_forest(dataset, params), max_order)


def _table_tensor(dataset):
    sizes = tuple(len(dataset.levels[n]) for n in dataset.feature_names)
    expected = int(np.prod(sizes))
    if dataset.n_rows != expected:
        raise IncompleteGridError(
            f"table has {dataset.n_rows} rows; a complete grid needs {expected}"
        )
    tensor = np.full(sizes, np.nan)
    for r in range(dataset.n_rows):
        idx = tuple(dataset.codes[r])
        if not math.isnan(tensor[idx]):
            raise IncompleteGridError(f"duplicate grid cell {dataset.row_tokens(r)}")
        tensor[idx] = dataset.targets[r]
    return tensor


def exact_decompose(dataset, max_order: int = 3) -> EffectVector:
    """Direct decomposition of a complete factorial table (the small-instance oracle)."""
    tensor = _table_tensor(dataset)
    n = tensor.ndim

    def marginal_fn(u):
        axes = tuple(i for i in range(n) if i not in u)
        return tensor.mean(axis=axes) if axes else tensor

    return _effect_vector(
        dataset.feature_names,
        marginal_fn,
        tensor.shape,
        float(np.var(tensor)),
        max_order,
    )


def marginal_performance(forest: SurrogateForest, subset):
    """Marginal predicted performance for every level (or level pair) of `subset`.

    Returns (level token tuples, values); lower is better, in target units.
    """
    if not 1 <= len(subset) <= 2:
        raise ValueError("marginal performance is defined for one or two modules")
    ordered = tuple(sorted(subset, key=forest.feature_names.index))
    table = marginal_table(forest, ordered)
    keys = list(product(*(forest.levels[name] for name in ordered)))
    return ordered, keys, table.ravel()


def cumulative_curve(vector: EffectVector):
    """(k, cumulative importance) with terms ranked by descending importance."""
    ranked = sorted(
        range(len(vector.terms)), key=lambda i: (-vector.terms[i][1], i)
    )
    series = []
    running = 0.0
    for k, i in enumerate(ranked, start=1):
        running += vector.terms[i][1]
        series.append((k, running))
    return series


# ---------------------------------------------------------------------------
# files
# ---------------------------------------------------------------------------

def write_effect_vector(vector: EffectVector, path, meta=None) -> None:
    lines = []
    for key in sorted(meta or {}):
        lines.append(f"# {key} {meta[key]}")
    lines.append(f"# total_variance {vector.total_variance!r}")
    lines.append(f"# residual {vector.residual!r}")
    lines.append(f"# max_order {vector.max_order}")
    lines.append(f"# features {'|'.join(vector.feature_names)}")
    lines.append("subset,order,importance")
    for subset, imp in vector.terms:
        lines.append(f"{'+'.join(subset)},{len(subset)},{imp!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_effect_vector(path) -> EffectVector:
    meta = {}
    terms = []
    header_seen = False
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                key, _, value = line[1:].strip().partition(" ")
                meta[key] = value
                continue
            if not header_seen:
                header_seen = True
                continue
            subset_text, order_text, imp_text = line.split(",")
            subset = tuple(subset_text.split("+"))
            if len(subset) != int(order_text):
                raise ValueError(f"order mismatch in {path}: {line!r}")
            terms.append((subset, float(imp_text)))
    return EffectVector(
        feature_names=tuple(meta["features"].split("|")),
        terms=tuple(terms),
        residual=float(meta["residual"]),
        total_variance=float(meta["total_variance"]),
        max_order=int(meta["max_order"]),
    )


def write_marginal_tables(forest: SurrogateForest, path, pairs=(), meta=None) -> None:
    """Singleton tables for every module plus the requested pair tables."""
    lines = []
    for key in sorted(meta or {}):
        lines.append(f"# {key} {meta[key]}")
    lines.append("subset,levels,prediction")
    subsets = [(name,) for name in forest.feature_names] + [tuple(p) for p in pairs]
    for subset in subsets:
        ordered, keys, values = marginal_performance(forest, subset)
        label = "+".join(ordered)
        for key, value in zip(keys, values):
            lines.append(f"{label},{'|'.join(key)},{float(value)!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
