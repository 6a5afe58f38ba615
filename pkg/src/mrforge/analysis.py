"""Variance analysis over discovered MRs and attribute-targeted re-search.

Each discovered dense MR is unrolled into one row ``[gamma.ravel() | beta]``.  The
principal directions of those rows show which input attributes the discovered
relations disagree on most; those attributes are then the only ones a follow-up
search is allowed to mutate.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .algebra import AffineMR, FlatLayout, MRSet, compose, mr_distance
from .errors import ConvergenceError, ValidationError
from .search import discover

ATTRIBUTE_BLOCKS = ("eta", "xs", "ys", "ts", "constants")


def attribute_of(layout: FlatLayout, slot: int) -> tuple[str, int]:
    """Map a flat slot to its ``(block, index)`` attribute; G and F share ``constants``."""
    block, index = layout.block_of(slot)
    if block in ("G", "F"):
        return "constants", 0 if block == "G" else 1
    return block, index


def slots_of(layout: FlatLayout, attrs) -> list[int]:
    """Inverse of :func:`attribute_of` for a list of attributes."""
    out = []
    for block, index in attrs:
        if block == "constants":
            if index not in (0, 1):
                raise ValidationError(f"constants index must be 0 (G) or 1 (F), got {index}")
            out.append(layout.index("G" if index == 0 else "F"))
        elif block in ("G", "F"):
            out.append(layout.index(block))
        else:
            out.append(layout.index(block, index))
    return sorted(set(out))


@dataclass(frozen=True)
class ColumnLabel:
    param: str          # "gamma" or "beta"
    row: int            # flat slot of the morphed value
    col: int | None     # flat slot of the source value (gamma only)
    block: str
    index: int

    def position(self):
        return (self.param, self.row, self.col)


def column_labels(layout: FlatLayout) -> list[ColumnLabel]:
    n = layout.total_dim
    attrs = [attribute_of(layout, i) for i in range(n)]
    labels = [ColumnLabel("gamma", i, j, *attrs[i]) for i in range(n) for j in range(n)]
    labels += [ColumnLabel("beta", i, None, *attrs[i]) for i in range(n)]
    return labels


@dataclass(eq=False)
class ParameterMatrix:
    rows: np.ndarray
    column_labels: list
    layout: FlatLayout
    member_labels: list

    @property
    def shape(self):
        return self.rows.shape


def parameter_matrix(mrs, centered: bool = False) -> ParameterMatrix:
    """Stack the parameters of every discovered member of ``mrs`` into rows."""
    members = mrs.discovered() if isinstance(mrs, MRSet) else [m for m in mrs if m.provenance == "discovered"]
    if not members:
        raise ValidationError("no discovered MRs to analyse")
    layout = members[0].layout
    rows = []
    for m in members:
        if m.layout != layout or m.out_layout != layout:
            raise ValidationError(f"MR {m.label!r} does not share the common layout")
        dense = m.to_dense()
        rows.append(np.concatenate([dense.gamma.ravel(), dense.beta]))
    rows = np.array(rows)
    if centered:
        rows = rows - rows.mean(axis=0)
    return ParameterMatrix(rows=rows, column_labels=column_labels(layout), layout=layout,
                           member_labels=[m.label for m in members])


@dataclass(eq=False)
class VarianceReport:
    eigenvalues: np.ndarray
    components: np.ndarray          # (k, n_columns), unit rows
    attribute_scores: dict
    column_scores: np.ndarray
    column_labels: list
    total_variance: float

    def to_json(self) -> dict:
        return {
            "eigenvalues": [float(v) for v in self.eigenvalues],
            "total_variance": self.total_variance,
            "attribute_scores": {k: float(v) for k, v in self.attribute_scores.items()},
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    def save_csv(self, path) -> None:
        order = np.argsort(-self.column_scores, kind="stable")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["rank", "param", "row", "col", "block", "index", "score"])
            for rank, c in enumerate(order, start=1):
                lab = self.column_labels[c]
                w.writerow([rank, lab.param, lab.row, "" if lab.col is None else lab.col,
                            lab.block, lab.index, repr(float(self.column_scores[c]))])


def _power_eigs(X: np.ndarray, k: int, tol: float, max_iter: int, seed: int):
    """Top-``k`` eigenpairs of ``X.T @ X / (len(X) - 1)`` by deflated power iteration.

    The covariance is never formed; each product goes through ``X`` twice.
    """
    n_rows, n_cols = X.shape

    def apply(v):
        return X.T @ (X @ v) / (n_rows - 1)

    rng = np.random.default_rng(seed)
    scale = float(np.sum(X * X)) / (n_rows - 1)      # trace of the covariance
    values, vectors = [], []
    for _ in range(k):
        basis = np.array(vectors) if vectors else np.zeros((0, n_cols))

        def deflate(w):
            # re-orthogonalize twice; one pass loses orthogonality at ~1e-8
            for _ in range(2):
                w = w - basis.T @ (basis @ w)
            return w

        v = deflate(rng.normal(size=n_cols))
        v /= np.linalg.norm(v)
        lam, residual = 0.0, np.inf
        for _ in range(max_iter):
            w = deflate(apply(v))
            norm = np.linalg.norm(w)
            if norm <= 1e-14 * max(scale, 1e-300):
                # remaining spectrum is numerically zero
                lam, residual = 0.0, norm
                break
            lam = float(v @ w)
            residual = float(np.linalg.norm(w - lam * v))
            v = w / norm
            if residual <= tol * scale:
                break
        else:
            raise ConvergenceError("power iteration did not converge", residual / max(scale, 1e-300))
        values.append(max(lam, 0.0))
        vectors.append(v)
    return np.array(values), np.array(vectors)


def covariance_eigenanalysis(m: ParameterMatrix, k: int, *, tol: float = 1e-13,
                             max_iter: int = 200_000, seed: int = 0) -> VarianceReport:
    n_rows, n_cols = m.rows.shape
    if n_rows < 2:
        raise ValidationError("need at least two discovered MRs for a covariance")
    if not 1 <= k <= min(n_rows - 1, n_cols):
        raise ValidationError(f"k={k} outside [1, {min(n_rows - 1, n_cols)}]")
    X = m.rows - m.rows.mean(axis=0)
    values, vectors = _power_eigs(X, k, tol, max_iter, seed)
    order = np.argsort(-values, kind="stable")
    values, vectors = values[order], vectors[order]
    column_scores = np.sum(vectors ** 2, axis=0)
    per_block = {b: 0.0 for b in ATTRIBUTE_BLOCKS}
    for lab, s in zip(m.column_labels, column_scores):
        per_block[lab.block] += float(s)
    total = sum(per_block.values())
    scores = {b: v / total for b, v in per_block.items()} if total > 0 else per_block
    return VarianceReport(
        eigenvalues=values, components=vectors, attribute_scores=scores,
        column_scores=column_scores, column_labels=m.column_labels,
        total_variance=float(np.sum(X * X)) / (n_rows - 1),
    )


def high_variance_attributes(report: VarianceReport, top_n: int) -> list[tuple[str, int]]:
    """Distinct attributes behind the ``top_n`` highest-scoring parameter columns."""
    if top_n <= 0:
        return []
    n_cols = len(report.column_scores)
    if top_n > n_cols:
        warnings.warn(f"top_n={top_n} exceeds the {n_cols} available columns; clipped", stacklevel=2)
        top_n = n_cols
    order = np.argsort(-report.column_scores, kind="stable")[:top_n]
    out = []
    for c in order:
        lab = report.column_labels[c]
        attr = (lab.block, lab.index)
        if attr not in out:
            out.append(attr)
    return out


def targeted_discover(f, attrs, cost_cfg, search_cfg, n_target: int) -> MRSet:
    """:func:`~mrforge.search.discover` with mutation confined to ``attrs``.

    Only ``gamma[i, j]`` with both ``i`` and ``j`` among the selected slots, and
    ``beta[i]`` for selected ``i``, are ever perturbed; every other entry keeps its
    identity value.
    """
    attrs = list(attrs)
    if not attrs:
        raise ValidationError("targeted search needs at least one attribute")
    slots = slots_of(cost_cfg.layout, attrs)
    return discover(f, cost_cfg.layout, cost_cfg, search_cfg, n_target, attrs=slots)


def nearest_catalogue_match(g: AffineMR, catalogue, samples) -> list[tuple[str, float]]:
    """Rank catalogue members and their pairwise compositions by distance to ``g``."""
    catalogue = list(catalogue)
    if not catalogue:
        raise ValidationError("catalogue is empty")
    candidates = list(catalogue)
    for a in catalogue:
        for b in catalogue:
            if a is not b and a.layout == b.out_layout:
                candidates.append(compose(a, b))
    ranked = []
    for c in candidates:
        if c.layout == g.layout and c.out_layout == g.out_layout:
            ranked.append((c.label, mr_distance(g, c, samples)))
    ranked.sort(key=lambda item: (item[1], item[0]))
    return ranked
