"""Divergence between prefix-context and full-context predictive distributions:
the three measures, per-pair divergence matrices over every (target position,
prefix length) cell, the matrix-threshold walk, and supervision export.

Matrix file format, one record per pair:
    header line  "pair_id T N measure" (space separated)
    T lines of N tab-separated values with 9 significant digits
Supervision file format: tab-separated (pair_id, t, j, target_value) records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import SentencePair

MEASURES = ("euclidean", "kl", "cosine")
KL_EPS = 1e-10


def _as_same_dim(p, q):
    pa = np.asarray(p, dtype=np.float64)
    qa = np.asarray(q, dtype=np.float64)
    if pa.shape != qa.shape or pa.ndim != 1:
        raise ValueError(f"dimension mismatch: {pa.shape} vs {qa.shape}")
    return pa, qa


def euclidean_divergence(p, q) -> float:
    pa, qa = _as_same_dim(p, q)
    return float(np.sqrt(np.sum((pa - qa) ** 2)))


def kl_divergence(p, q) -> float:
    """Directed divergence of p from q, with q clamped below at 1e-10 and zero
    entries of p contributing nothing. Clamp noise can push the value a hair
    below zero, so the result is clipped at 0."""
    pa, qa = _as_same_dim(p, q)
    qc = np.maximum(qa, KL_EPS)
    mask = pa > 0
    val = float(np.sum(pa[mask] * np.log(pa[mask] / qc[mask])))
    return max(0.0, val)


def cosine_distance(p, q) -> float:
    """One minus the cosine of the angle between p and q; for non-negative
    vectors this lives in [0, 1]."""
    pa, qa = _as_same_dim(p, q)
    np_norm = float(np.linalg.norm(pa))
    nq_norm = float(np.linalg.norm(qa))
    if np_norm == 0.0 or nq_norm == 0.0:
        raise ValueError("cosine distance needs vectors of positive norm")
    val = 1.0 - float(np.dot(pa, qa)) / (np_norm * nq_norm)
    return min(1.0, max(0.0, val))


_MEASURE_FNS = {
    "euclidean": euclidean_divergence,
    "kl": kl_divergence,
    "cosine": cosine_distance,
}


def divergence_fn(measure: str):
    if measure not in _MEASURE_FNS:
        raise ValueError(f"unknown measure {measure!r}, expected one of {MEASURES}")
    return _MEASURE_FNS[measure]


@dataclass(frozen=True)
class DivergenceMatrix:
    """values[t-1][j-1] is the divergence between the next-token distribution
    after reading j source tokens and the full-context one, for target position
    t, both teacher-forced on the reference."""

    pair_id: int
    measure: str
    values: np.ndarray

    def __post_init__(self):
        divergence_fn(self.measure)
        arr = np.asarray(self.values, dtype=np.float64)
        object.__setattr__(self, "values", arr)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"matrix must be 2-D and non-empty, got shape {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("matrix contains NaN or Inf")
        if np.any(arr < 0):
            raise ValueError("matrix contains negative entries")
        if self.measure == "cosine" and np.any(arr > 1.0):
            raise ValueError("cosine entries must lie in [0, 1]")

    @property
    def n_target(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_source(self) -> int:
        return int(self.values.shape[1])


def divergence_matrix(model, pair: SentencePair, measure: str) -> DivergenceMatrix:
    """Full grid for one pair. Every column, including the last, comes from the
    same prefix-query path; the final column is therefore a self-divergence and
    lands at zero up to float noise."""
    fn = divergence_fn(measure)
    n = pair.n_source
    t_len = pair.n_target
    columns = [
        model.row_distributions(pair.source[:j], pair.target, source_total_len=n)
        for j in range(1, n + 1)
    ]
    full = columns[-1]
    values = np.empty((t_len, n))
    for j0, col in enumerate(columns):
        for t0 in range(t_len):
            values[t0, j0] = fn(col[t0], full[t0])
    return DivergenceMatrix(pair_id=pair.id, measure=measure, values=values)


def threshold_path(matrix, threshold: float, r_max: int | None = None):
    """Decision walk over the matrix with the reference target: write (record
    the current prefix length and move to the next row) when the entry is at or
    below the threshold, when r_max consecutive reads have piled up, or when the
    source is exhausted; read (next column) otherwise. The consecutive-read
    counter starts at 1, counting the mandatory first read.

    Accepts a DivergenceMatrix or any T x N array of scores."""
    if not threshold > 0:
        raise ValueError("threshold must be positive")
    if r_max is not None and r_max < 1:
        raise ValueError("r_max must be >= 1 when given")
    values = matrix.values if isinstance(matrix, DivergenceMatrix) else np.asarray(matrix)
    if values.ndim != 2 or values.size == 0:
        raise ValueError("scores must form a non-empty 2-D grid")
    t_len, n = values.shape
    g = []
    j = 1
    r_c = 1
    for t0 in range(t_len):
        while not (
            values[t0, j - 1] <= threshold
            or (r_max is not None and r_c >= r_max)
            or j == n
        ):
            j += 1
            r_c += 1
        g.append(j)
        r_c = 0
    return g


def save_matrices(matrices, path) -> None:
    lines = []
    for m in matrices:
        t_len, n = m.values.shape
        lines.append(f"{m.pair_id} {t_len} {n} {m.measure}")
        for row in m.values:
            lines.append("\t".join(f"{v:.9g}" for v in row))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_matrices(path):
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    out = []
    i = 0
    while i < len(lines):
        if not lines[i].strip():
            i += 1
            continue
        head = lines[i].split()
        if len(head) != 4:
            raise ValueError(f"line {i + 1}: bad matrix header {lines[i]!r}")
        pair_id, t_len, n = int(head[0]), int(head[1]), int(head[2])
        measure = head[3]
        rows = []
        for r in range(t_len):
            idx = i + 1 + r
            if idx >= len(lines):
                raise ValueError(f"line {idx + 1}: truncated matrix for pair {pair_id}")
            vals = lines[idx].split("\t")
            if len(vals) != n:
                raise ValueError(
                    f"line {idx + 1}: expected {n} values, got {len(vals)}"
                )
            rows.append([float(v) for v in vals])
        out.append(DivergenceMatrix(pair_id=pair_id, measure=measure, values=np.array(rows)))
        i += 1 + t_len
    return out


@dataclass(frozen=True)
class SupervisionRecord:
    """One training target for the divergence predictor: the matrix entry at
    (target position t, prefix length j) of a pair."""

    pair_id: int
    t: int
    j: int
    target_value: float

    def __post_init__(self):
        if self.t < 1 or self.j < 1:
            raise ValueError("t and j are 1-based")
        if not math.isfinite(self.target_value) or self.target_value < 0:
            raise ValueError(f"bad target value {self.target_value!r}")


def matrix_records(matrix: DivergenceMatrix):
    """Every grid cell of a matrix as supervision records."""
    t_len, n = matrix.values.shape
    return [
        SupervisionRecord(matrix.pair_id, t0 + 1, j0 + 1, float(matrix.values[t0, j0]))
        for t0 in range(t_len)
        for j0 in range(n)
    ]


def save_supervision(records, path) -> None:
    lines = [f"{r.pair_id}\t{r.t}\t{r.j}\t{r.target_value:.17g}" for r in records]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_supervision(path):
    out = []
    for line_no, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 4:
            raise ValueError(f"line {line_no}: expected 4 tab-separated fields")
        out.append(
            SupervisionRecord(int(parts[0]), int(parts[1]), int(parts[2]), float(parts[3]))
        )
    return out
