"""Partition similarity and bootstrap teacher selection.

The Jaccard subgroup similarity index (SSI) compares two partitions of the
same units. For every subgroup H of either partition it takes the ordered
pairs (i, j), i != j, with i in H, and computes

    N11 / (N11 + N10 + N01)

where N11 counts pairs grouped together in both partitions and N10/N01 pairs
grouped together in exactly one. Subgroups without any such pair score 1.
The SSI is the mean of these ratios over all subgroups of both partitions.
Per subgroup the counts come from the contingency table of the two
memberships, so no n-by-n matrix is formed.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from cdtree.core import Dataset
from cdtree.errors import DataError
from cdtree.parallel import pmap
from cdtree.rng import derive_int, derive_rng
from cdtree.teachers import TeacherSpec, fit_teacher
from cdtree.tree import TreeParams, fit_tree, prune_to_depth


def coassignment(membership) -> np.ndarray:
    """Boolean matrix with ``C[i, j]`` true iff units i != j share a group."""
    m = np.asarray(membership)
    c = m[:, None] == m[None, :]
    np.fill_diagonal(c, False)
    return c


@dataclass(frozen=True)
class SsiResult:
    ssi: float
    ratios: np.ndarray  # first partition's subgroups, then the second's
    n_groups: tuple[int, int]


def _ratios(table: np.ndarray) -> np.ndarray:
    """Per-row ratios for row subgroups of a contingency table."""
    row = table.sum(axis=1)
    col = table.sum(axis=0)
    n11 = np.sum(table * (table - 1), axis=1)
    denom = np.sum(table * (row[:, None] + col[None, :] - table - 1), axis=1)
    return np.where(denom > 0, n11 / np.where(denom > 0, denom, 1), 1.0)


def jaccard_ssi(membership1, membership2) -> SsiResult:
    a = np.asarray(membership1)
    b = np.asarray(membership2)
    if a.shape != b.shape or a.ndim != 1:
        raise DataError(f"memberships must be 1-d and of equal length (got {a.shape} and "
                        f"{b.shape})")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1 if a.size else 0, ib.max() + 1 if b.size else 0),
                     dtype=np.int64)
    np.add.at(table, (ia, ib), 1)
    ratios = np.concatenate([_ratios(table), _ratios(table.T)])
    return SsiResult(float(ratios.mean()) if ratios.size else 1.0, ratios, table.shape)


# ---------------------------------------------------------------- teacher selection

@dataclass(frozen=True)
class PairRecord:
    teacher: str
    depth: int
    bootstrap: int
    ssi: float
    depth_mismatch: bool
    features: tuple[frozenset, frozenset]


@dataclass(frozen=True)
class SelectionResult:
    teachers: tuple[str, ...]
    depths: tuple[int, ...]
    bootstraps: int
    records: tuple[PairRecord, ...] = field(repr=False)
    n_features: int = 0
    feature_names: tuple[str, ...] = ()

    def _select(self, teacher: str, depth: int) -> list[PairRecord]:
        return [r for r in self.records if r.teacher == teacher and r.depth == depth]

    def mean_ssi(self, teacher: str, depth: int) -> float:
        return float(np.mean([r.ssi for r in self._select(teacher, depth)]))

    def se_ssi(self, teacher: str, depth: int) -> float:
        v = np.array([r.ssi for r in self._select(teacher, depth)])
        return float(v.std(ddof=1) / np.sqrt(v.size))

    def mismatch_rate(self, teacher: str, depth: int) -> float:
        return float(np.mean([r.depth_mismatch for r in self._select(teacher, depth)]))

    def score(self, teacher: str) -> float:
        """Mean SSI averaged over the requested depths."""
        return float(np.mean([self.mean_ssi(teacher, d) for d in self.depths]))

    @property
    def recommended(self) -> str:
        scores = [self.score(t) for t in self.teachers]
        return self.teachers[int(np.argmax(scores))]  # first maximum wins ties

    def summary(self) -> dict:
        return {
            "teachers": list(self.teachers),
            "depths": list(self.depths),
            "bootstraps": self.bootstraps,
            "recommended": self.recommended,
            "scores": {t: self.score(t) for t in self.teachers},
            "cells": [{"teacher": t, "depth": d, "mean_ssi": self.mean_ssi(t, d),
                       "se_ssi": self.se_ssi(t, d),
                       "depth_mismatch_rate": self.mismatch_rate(t, d)}
                      for t in self.teachers for d in self.depths],
            "feature_frequency": feature_stability(self),
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["teacher", "depth", "bootstrap", "ssi", "depth_mismatch"])
        for r in self.records:
            w.writerow([r.teacher, r.depth, r.bootstrap, repr(r.ssi), int(r.depth_mismatch)])
        return buf.getvalue()


def _tree_features(tree) -> frozenset:
    return frozenset(int(f) for f in tree.features_used())


def select_teacher(train: Dataset, teachers, depths=(1, 2, 3, 4), B: int = 100,
                   student: TreeParams = TreeParams(), seed: int = 0,
                   threads: int | None = None, names=None) -> SelectionResult:
    """Rank teachers by the stability of their distilled partitions.

    Each teacher is fit once on ``train``. For each bootstrap ``b`` two
    independent resamples of (X, teacher prediction) get a student tree
    each; the trees are cut to each requested depth, the original training
    units are routed through both, and the SSI of the two memberships is
    recorded. A pair whose tree cannot reach ``2**depth`` leaves is kept
    as-is and flagged.
    """
    teachers = list(teachers)
    if B < 2:
        raise ValueError("B must be >= 2")
    depths = tuple(int(d) for d in depths)
    if not depths or min(depths) < 1:
        raise ValueError("depths must be >= 1")
    names = list(names) if names is not None else [
        t.name if isinstance(t, TeacherSpec) else str(t) for t in teachers]
    if len(set(names)) != len(names):
        raise ValueError(f"teacher names must be distinct: {names}")
    records: list[PairRecord] = []
    for t_index, (spec, name) in enumerate(zip(teachers, names)):
        tau_d = fit_teacher(train, spec, derive_int(seed, "teacher", t_index), threads).tau_hat_d

        def pair(b: int, t_index=t_index, tau_d=tau_d, name=name):
            trees = []
            for side in (0, 1):
                rows = derive_rng(seed, "bootstrap", t_index, b, side).integers(
                    0, train.n, train.n)
                trees.append(fit_tree(train.x[rows], tau_d[rows], student,
                                      derive_int(seed, "student", t_index, b, side)))
            out = []
            for d in depths:
                cut = [prune_to_depth(t, d) for t in trees]
                m1, m2 = (c.apply(train.x) for c in cut)
                mismatch = any(c.n_leaves != 2 ** d for c in cut)
                out.append(PairRecord(name, d, b, jaccard_ssi(m1, m2).ssi, mismatch,
                                      (_tree_features(cut[0]), _tree_features(cut[1]))))
            return out

        for chunk in pmap(pair, range(B), threads):
            records.extend(chunk)
    records.sort(key=lambda r: (names.index(r.teacher), depths.index(r.depth), r.bootstrap))
    return SelectionResult(tuple(names), depths, B, tuple(records), train.p,
                           tuple(train.feature_names))


def feature_stability(result: SelectionResult) -> dict:
    """Fraction of bootstrap trees using each feature, per teacher and depth."""
    out: dict = {}
    for t in result.teachers:
        per_depth = {}
        for d in result.depths:
            recs = result._select(t, d)
            trees = [f for r in recs for f in r.features]
            per_depth[str(d)] = {
                result.feature_names[j] if result.feature_names else str(j):
                    sum(j in f for f in trees) / len(trees)
                for j in range(result.n_features)}
        out[t] = per_depth
    return out
