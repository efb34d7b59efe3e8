"""Datasets, split rules, subgroups and partitions.

A subgroup is a conjunction of axis-aligned rules ``X[j] <= s`` or
``X[j] > s``. A partition is a list of subgroups such that every point of
the covariate space satisfies exactly one of them. Partitions produced from
a fitted tree satisfy this by construction.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from cdtree.errors import DataError, PartitionError


class Direction(str, Enum):
    LE = "<="
    GT = ">"


@dataclass(frozen=True)
class Dataset:
    """Covariates ``x`` (n x p), binary treatment ``z`` and outcome ``y``."""

    x: np.ndarray
    z: np.ndarray
    y: np.ndarray
    feature_names: tuple[str, ...] = ()
    unit_ids: tuple = ()

    def __post_init__(self):
        x = np.array(self.x, dtype=float, copy=True)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DataError("x must be a 2-d array")
        n, p = x.shape
        z = np.asarray(self.z)
        y = np.array(self.y, dtype=float, copy=True)
        if z.shape != (n,) or y.shape != (n,):
            raise DataError(f"x has {n} rows but z has shape {z.shape} and y {y.shape}")
        if n < 2:
            raise DataError("a dataset needs at least 2 units")
        bad = ~np.isfinite(x)
        if bad.any():
            i, j = np.argwhere(bad)[0]
            raise DataError(f"non-finite covariate at row {i}, column {j}")
        bad_y = np.flatnonzero(~np.isfinite(y))
        if bad_y.size:
            raise DataError(f"non-finite outcome at row {bad_y[0]}")
        if not np.all((z == 0) | (z == 1)):
            raise DataError("treatment must be coded 0/1")
        names = tuple(self.feature_names) or tuple(f"X{j + 1}" for j in range(p))
        if len(names) != p:
            raise DataError(f"{len(names)} feature names for {p} columns")
        if len(set(names)) != p:
            raise DataError("feature names must be unique")
        ids = tuple(self.unit_ids) or tuple(range(n))
        if len(ids) != n:
            raise DataError(f"{len(ids)} unit ids for {n} rows")
        for arr in (x, y):
            arr.setflags(write=False)
        z = z.astype(np.int64)
        z.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "z", z)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "feature_names", names)
        object.__setattr__(self, "unit_ids", ids)

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def p(self) -> int:
        return self.x.shape[1]

    def subset(self, index) -> "Dataset":
        index = np.asarray(index)
        return Dataset(
            self.x[index],
            self.z[index],
            self.y[index],
            self.feature_names,
            tuple(self.unit_ids[i] for i in np.arange(self.n)[index]),
        )


@dataclass(frozen=True)
class Rule:
    feature_index: int
    direction: Direction
    threshold: float

    def __post_init__(self):
        if not np.isfinite(self.threshold):
            raise ValueError("rule threshold must be finite")
        if self.feature_index < 0:
            raise ValueError("feature index must be non-negative")
        object.__setattr__(self, "direction", Direction(self.direction))

    def label(self, feature_names: Sequence[str] | None = None) -> str:
        name = (
            feature_names[self.feature_index]
            if feature_names is not None
            else f"X{self.feature_index + 1}"
        )
        return f"{name}{self.direction.value}{self.threshold:.6g}"

    def mask(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        if self.feature_index >= x.shape[1]:
            raise IndexError(
                f"rule uses feature {self.feature_index} but data has {x.shape[1]} columns"
            )
        col = x[:, self.feature_index]
        if self.direction is Direction.LE:
            return col <= self.threshold
        return col > self.threshold


def rule_matches(rule: Rule, x_row) -> bool:
    """True iff ``x_row`` satisfies ``rule``; the threshold itself goes to LE."""
    x_row = np.asarray(x_row, dtype=float)
    if not 0 <= rule.feature_index < x_row.shape[-1]:
        raise IndexError(
            f"rule uses feature {rule.feature_index} but row has {x_row.shape[-1]} entries"
        )
    v = x_row[rule.feature_index]
    if rule.direction is Direction.LE:
        return bool(v <= rule.threshold)
    return bool(v > rule.threshold)


@dataclass(frozen=True)
class Subgroup:
    rules: tuple[Rule, ...] = ()
    label: str = ""

    def __post_init__(self):
        object.__setattr__(self, "rules", tuple(self.rules))
        if not self.label:
            object.__setattr__(self, "label", self.describe())

    def describe(self, feature_names: Sequence[str] | None = None) -> str:
        if not self.rules:
            return "all"
        return " & ".join(r.label(feature_names) for r in self.rules)

    def mask(self, x: np.ndarray) -> np.ndarray:
        x = np.atleast_2d(x)
        out = np.ones(x.shape[0], dtype=bool)
        for r in self.rules:
            out &= r.mask(x)
        return out

    def features(self) -> set[int]:
        return {r.feature_index for r in self.rules}


@dataclass(frozen=True)
class Partition:
    subgroups: tuple[Subgroup, ...]
    source: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "subgroups", tuple(self.subgroups))
        if not self.subgroups:
            raise PartitionError("a partition needs at least one subgroup")

    def __len__(self) -> int:
        return len(self.subgroups)

    @property
    def labels(self) -> list[str]:
        return [g.label for g in self.subgroups]

    def features(self) -> set[int]:
        out: set[int] = set()
        for g in self.subgroups:
            out |= g.features()
        return out

    def thresholds(self) -> list[tuple[int, float]]:
        """Distinct (feature, threshold) split points used by the partition."""
        seen = []
        for g in self.subgroups:
            for r in g.rules:
                key = (r.feature_index, r.threshold)
                if key not in seen:
                    seen.append(key)
        return seen


def assign(partition: Partition, data) -> np.ndarray:
    """Index of the subgroup each row belongs to.

    ``data`` may be a :class:`Dataset` or a covariate matrix. Raises
    :class:`PartitionError` if some row matches no subgroup or several.
    """
    x = data.x if isinstance(data, Dataset) else np.atleast_2d(np.asarray(data, dtype=float))
    hits = np.zeros(x.shape[0], dtype=np.int64)
    out = np.zeros(x.shape[0], dtype=np.int64)
    for g, sub in enumerate(partition.subgroups):
        m = sub.mask(x)
        hits += m
        out[m] = g
    bad = np.flatnonzero(hits != 1)
    if bad.size:
        raise PartitionError(
            f"row {bad[0]} matches {hits[bad[0]]} subgroups; partition is not exhaustive "
            "and mutually exclusive"
        )
    return out


def partition_from_tree(tree, feature_names: Sequence[str] | None = None) -> Partition:
    """One subgroup per leaf, leaves ordered depth-first, left child first."""
    subgroups = []
    stack: list[tuple[int, tuple[Rule, ...]]] = [(0, ())]
    while stack:
        node, rules = stack.pop()
        if tree.left[node] < 0:
            sub = Subgroup(rules)
            if feature_names is not None:
                sub = Subgroup(rules, sub.describe(feature_names))
            subgroups.append(sub)
            continue
        f = int(tree.feature[node])
        s = float(tree.threshold[node])
        stack.append((int(tree.right[node]), rules + (Rule(f, Direction.GT, s),)))
        stack.append((int(tree.left[node]), rules + (Rule(f, Direction.LE, s),)))
    return Partition(tuple(subgroups), {"kind": "tree", "depth": int(tree.depth)})
