"""Random-forest surrogate over categorical module settings.

Trees split on one-level-vs-rest partitions chosen by variance reduction, so
every configuration maps to exactly one leaf and the forest is an exact
piecewise-constant function on the categorical domain. Marginal expectations
under the uniform product measure are computed by weighted partition
traversal, never by sampling.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "ForestParams",
    "SurrogateForest",
    "Tree",
    "fit_forest",
    "interpolating_params",
    "marginal_table",
    "marginal_prediction",
]


@dataclass(frozen=True)
class ForestParams:
    n_trees: int = 64
    max_depth: int | None = None
    min_leaf: int = 1
    feature_subsample: int | None = 5
    bootstrap: bool = True
    seed: int = 0


def interpolating_params(seed: int = 0) -> ForestParams:
    """Parameters under which the forest reproduces a complete table exactly."""
    return ForestParams(
        n_trees=1, max_depth=None, min_leaf=1, feature_subsample=None,
        bootstrap=False, seed=seed,
    )


@dataclass
class Tree:
    """Flat-array binary tree; feature < 0 marks a leaf."""

    feature: np.ndarray
    level: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size


@dataclass
class SurrogateForest:
    feature_names: tuple[str, ...]
    levels: dict[str, tuple[str, ...]]
    trees: list[Tree]
    params: ForestParams
    oob_r2: float | None = None
    _level_sizes: tuple[int, ...] = field(init=False)
    _partitions: list | None = field(init=False, default=None, repr=False)

    def __post_init__(self):
        self._level_sizes = tuple(len(self.levels[n]) for n in self.feature_names)

    @property
    def level_sizes(self) -> tuple[int, ...]:
        return self._level_sizes

    def predict(self, codes) -> np.ndarray:
        """Forest prediction for integer-coded rows (n, q)."""
        codes = np.atleast_2d(np.asarray(codes, dtype=np.int64))
        total = np.zeros(codes.shape[0])
        for tree in self.trees:
            total += _apply_tree(tree, codes)
        return total / len(self.trees)

    def partitions(self) -> list:
        """Per-tree leaf partitions of the categorical domain (cached)."""
        if self._partitions is None:
            self._partitions = [
                _leaf_partition(tree, self._level_sizes) for tree in self.trees
            ]
        return self._partitions


def _apply_tree(tree: Tree, codes: np.ndarray) -> np.ndarray:
    node = np.zeros(codes.shape[0], dtype=np.int64)
    rows = np.arange(codes.shape[0])
    while True:
        feat = tree.feature[node]
        active = feat >= 0
        if not active.any():
            break
        idx = rows[active]
        cur = node[active]
        go_left = codes[idx, feat[active]] == tree.level[cur]
        node[active] = np.where(go_left, tree.left[cur], tree.right[cur])
    return tree.value[node]


class _TreeBuilder:
    def __init__(self, codes, targets, level_sizes, params, rng):
        self.codes = codes
        self.targets = targets
        self.level_sizes = level_sizes
        self.params = params
        self.rng = rng
        self.feature = []
        self.level = []
        self.left = []
        self.right = []
        self.value = []

    def _new_node(self, mean):
        self.feature.append(-1)
        self.level.append(-1)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(mean)
        return len(self.feature) - 1

    def build(self, row_idx, depth=0) -> int:
        y = self.targets[row_idx]
        n = y.size
        total = y.sum()
        mean = total / n
        node = self._new_node(mean)
        if n < 2 * self.params.min_leaf:
            return node
        sumsq_here = float(np.dot(y, y))
        if sumsq_here - total * mean <= 1e-12 * max(1.0, sumsq_here):
            return node  # pure node
        if self.params.max_depth is not None and depth >= self.params.max_depth:
            return node

        q = self.codes.shape[1]
        if self.params.feature_subsample is not None and self.params.feature_subsample < q:
            candidates = np.sort(
                self.rng.choice(q, size=self.params.feature_subsample, replace=False)
            )
        else:
            candidates = range(q)

        best = None  # (sse, feature, level); ties resolve to lowest feature/level
        for f in candidates:
            col = self.codes[row_idx, f]
            counts = np.bincount(col, minlength=self.level_sizes[f])
            sums = np.bincount(col, weights=y, minlength=self.level_sizes[f])
            sumsq = np.bincount(col, weights=y * y, minlength=self.level_sizes[f])
            for lvl in range(self.level_sizes[f]):
                c = counts[lvl]
                if c < self.params.min_leaf or n - c < self.params.min_leaf or c == 0 or c == n:
                    continue
                s, ss = sums[lvl], sumsq[lvl]
                sse = (ss - s * s / c) + ((sumsq_here - ss) - (total - s) ** 2 / (n - c))
                key = (sse, f, lvl)
                if best is None or key < best:
                    best = key
        if best is None:
            return node

        _, f, lvl = best
        mask = self.codes[row_idx, f] == lvl
        left = self.build(row_idx[mask], depth + 1)
        right = self.build(row_idx[~mask], depth + 1)
        self.feature[node] = f
        self.level[node] = lvl
        self.left[node] = left
        self.right[node] = right
        return node

    def tree(self) -> Tree:
        return Tree(
            feature=np.array(self.feature, dtype=np.int64),
            level=np.array(self.level, dtype=np.int64),
            left=np.array(self.left, dtype=np.int64),
            right=np.array(self.right, dtype=np.int64),
            value=np.array(self.value, dtype=float),
        )


def fit_forest(dataset, params: ForestParams = ForestParams()) -> SurrogateForest:
    """Grow the surrogate on a performance dataset; deterministic given seed."""
    codes = dataset.codes
    targets = dataset.targets
    n = codes.shape[0]
    if n == 0:
        raise ValueError("empty dataset")
    level_sizes = tuple(len(dataset.levels[name]) for name in dataset.feature_names)

    seeds = np.random.SeedSequence(params.seed).spawn(params.n_trees)
    trees = []
    oob_sum = np.zeros(n)
    oob_count = np.zeros(n)
    for s in seeds:
        rng = np.random.default_rng(s)
        if params.bootstrap:
            sample = rng.integers(0, n, size=n)
        else:
            sample = np.arange(n)
        builder = _TreeBuilder(codes, targets, level_sizes, params, rng)
        builder.build(sample)
        tree = builder.tree()
        trees.append(tree)
        if params.bootstrap:
            oob = np.setdiff1d(np.arange(n), sample, assume_unique=False)
            if oob.size:
                oob_sum[oob] += _apply_tree(tree, codes[oob])
                oob_count[oob] += 1

    oob_r2 = None
    if params.bootstrap:
        seen = oob_count > 0
        if seen.any():
            pred = oob_sum[seen] / oob_count[seen]
            y = targets[seen]
            ss_tot = float(np.sum((y - y.mean()) ** 2))
            if ss_tot > 0:
                oob_r2 = 1.0 - float(np.sum((y - pred) ** 2)) / ss_tot

    return SurrogateForest(
        feature_names=tuple(dataset.feature_names),
        levels={k: tuple(v) for k, v in dataset.levels.items()},
        trees=trees,
        params=params,
        oob_r2=oob_r2,
    )


# ---------------------------------------------------------------------------
# exact marginalization
# ---------------------------------------------------------------------------

class _LeafPartition:
    """A tree's leaves with their level availability and domain fractions.

    Each leaf covers the product of the level sets that survive its root
    path (bitmask per feature); its fraction of the uniform domain is the
    product of the per-feature fractions.
    """

    __slots__ = ("values", "fracs", "masks")

    def __init__(self, values, fracs, masks):
        self.values = values  # (n_leaves,)
        self.fracs = fracs    # (n_leaves, q) availability fraction per feature
        self.masks = masks    # (n_leaves, q) availability bitmask per feature


def _leaf_partition(tree: Tree, level_sizes) -> _LeafPartition:
    q = len(level_sizes)
    full = [(1 << s) - 1 for s in level_sizes]
    values, fracs, masks = [], [], []
    stack = [(0, full)]
    while stack:
        node, avail = stack.pop()
        f = tree.feature[node]
        if f < 0:
            values.append(tree.value[node])
            masks.append(avail)
            fracs.append(
                [bin(avail[i]).count("1") / level_sizes[i] for i in range(q)]
            )
            continue
        bit = 1 << tree.level[node]
        if avail[f] & bit:
            left = list(avail)
            left[f] = bit
            stack.append((tree.left[node], left))
        rest = avail[f] & ~bit
        if rest:
            right = list(avail)
            right[f] = rest
            stack.append((tree.right[node], right))
    return _LeafPartition(
        np.array(values), np.array(fracs), [tuple(m) for m in masks]
    )


def _mask_indices(mask: int) -> np.ndarray:
    indices = []
    level = 0
    while mask:
        if mask & 1:
            indices.append(level)
        mask >>= 1
        level += 1
    return np.array(indices, dtype=np.int64)


def marginal_table(forest: SurrogateForest, subset) -> np.ndarray:
    """Exact expectations of the forest over all levels of `subset`.

    Returns an array of shape [levels(f) for f in subset]; entry [i, j, ...]
    is the expectation of the forest prediction with the subset's features
    fixed to those levels and every other feature uniform over its levels.
    Computed per tree from its leaf partition: every compatible leaf
    contributes its value weighted by the fraction of the uniform domain it
    covers over the non-subset features. No sampling.
    """
    positions = _subset_positions(forest, subset)
    sizes = forest.level_sizes
    if not positions:
        total = 0.0
        for part in forest.partitions():
            total += float(np.dot(part.values, np.prod(part.fracs, axis=1)))
        return np.asarray(total / len(forest.trees))

    shape = tuple(sizes[p] for p in positions)
    table = np.zeros(shape)
    index_cache: dict[int, np.ndarray] = {}
    for part in forest.partitions():
        weights = np.prod(part.fracs, axis=1)
        for p in positions:
            weights = weights / part.fracs[:, p]
        contributions = weights * part.values
        groups: dict[tuple, float] = {}
        for leaf, mask in enumerate(part.masks):
            key = tuple(mask[p] for p in positions)
            groups[key] = groups.get(key, 0.0) + contributions[leaf]
        for key, value in groups.items():
            sel = []
            for bits in key:
                if bits not in index_cache:
                    index_cache[bits] = _mask_indices(bits)
                sel.append(index_cache[bits])
            table[np.ix_(*sel)] += value
    return table / len(forest.trees)


def _subset_positions(forest: SurrogateForest, subset):
    name_pos = {name: q for q, name in enumerate(forest.feature_names)}
    positions = []
    for name in subset:
        if name not in name_pos:
            raise KeyError(f"unknown feature {name!r}")
        positions.append(name_pos[name])
    if len(set(positions)) != len(positions):
        raise ValueError(f"duplicate features in subset {tuple(subset)}")
    if positions != sorted(positions):
        raise ValueError("subset must follow the dataset's feature order")
    return positions


def marginal_prediction(forest: SurrogateForest, assignment) -> float:
    """Expectation of the forest with `assignment` fixed, all else uniform."""
    names = [n for n in forest.feature_names if n in assignment]
    if len(names) != len(assignment):
        missing = set(assignment) - set(names)
        raise KeyError(f"unknown features {sorted(missing)}")
    table = marginal_table(forest, tuple(names))
    idx = []
    for name in names:
        token = assignment[name]
        try:
            idx.append(forest.levels[name].index(token))
        except ValueError:
            raise KeyError(f"level {token!r} not in the training domain of {name!r}") from None
    return float(table[tuple(idx)])
