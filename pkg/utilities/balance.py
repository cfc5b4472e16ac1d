"""
ADASYN oversampling of the minority class.

Minority points that sit among many majority neighbours get proportionally
more synthetic samples. Each synthetic row is
    s = x_i + lambda * (x_z - x_i),  lambda ~ U[0, 1]
with x_z a minority member of x_i's k nearest neighbours (over the full
training set). Parents and lambda of every synthetic row can be captured in
an audit list.
"""

import csv
import logging
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence

import numpy as np
from pydantic import BaseModel, Field

import config
from utilities.errors import InsufficientRows, SingleClass
from utilities.featurize import LabeledDataset

logger = logging.getLogger(__name__)


class AdasynConfig(BaseModel):
    """ADASYN parameters."""
    k: int = Field(default=config.ADASYN_K, ge=1)
    beta: float = Field(default=config.ADASYN_BETA, ge=0.0, le=1.0)
    seed: int = config.MASTER_SEED


@dataclass(frozen=True)
class SyntheticRecord:
    synthetic_row_id: str
    parent_a: str
    parent_b: str
    lam: float


def knn(query_row: np.ndarray, rows: np.ndarray, k: int, self_index: Optional[int] = None) -> np.ndarray:
    """
    Indices of the k nearest rows by Euclidean distance.

    Args:
        query_row: The query vector
        rows: Candidate matrix
        k: Neighbour count
        self_index: Row index of the query inside rows, excluded from results

    Returns:
        k row indices, nearest first; ties go to the lower row index

    Raises:
        InsufficientRows: fewer than k candidate rows
    """
    available = rows.shape[0] - (1 if self_index is not None else 0)
    if k > available:
        raise InsufficientRows(f"k={k} neighbours requested from {available} rows")
    diff = rows - query_row
    dist = np.einsum("ij,ij->i", diff, diff)
    order = np.argsort(dist, kind="stable")
    if self_index is not None:
        order = order[order != self_index]
    return order[:k]


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def _fresh_ids(existing: set, count: int) -> List[str]:
    ids = []
    n = 0
    while len(ids) < count:
        candidate = f"adasyn-{n:06d}"
        if candidate not in existing:
            ids.append(candidate)
        n += 1
    return ids


def adasyn(
    dataset: LabeledDataset,
    cfg: AdasynConfig,
    audit: Optional[List[SyntheticRecord]] = None,
    reserved_ids: Sequence[str] = (),
) -> LabeledDataset:
    """
    Oversample the minority class adaptively.

    Args:
        dataset: Two-class training data (raw count space)
        cfg: k, beta, seed
        audit: If given, one SyntheticRecord per synthetic row is appended
        reserved_ids: Row ids synthetic rows must not take besides the input's own
            (the held-out rows of a fold)

    Returns:
        Input rows unchanged, followed by synthetic minority rows

    Raises:
        SingleClass: dataset lacks one of the classes
        InsufficientRows: k exceeds the available neighbours
    """
    dataset.require_both_classes()
    counts = dataset.class_counts()
    minority_label = min(counts, key=lambda label: (counts[label], label))
    m_s = counts[minority_label]
    m_l = dataset.n_rows - m_s
    total = (m_l - m_s) * cfg.beta
    if total <= 0:
        logger.info(f"[ADASYN] Already balanced ({m_s} vs {m_l}); nothing to generate")
        return dataset

    X = dataset.matrix
    minority_idx = np.flatnonzero(dataset.labels == minority_label)
    is_minority = dataset.labels == minority_label

    neighbours = [knn(X[i], X, cfg.k, self_index=int(i)) for i in minority_idx]
    ratios = np.array([np.sum(~is_minority[nb]) / cfg.k for nb in neighbours])
    if ratios.sum() == 0:
        logger.info("[ADASYN] No minority point has majority neighbours; using uniform weights")
        weights = np.full(m_s, 1.0 / m_s)
    else:
        weights = ratios / ratios.sum()
    per_point = [round_half_up(w * total) for w in weights]

    rng = np.random.default_rng(cfg.seed)
    synthetic = []
    parents = []
    for i, nb, g in zip(minority_idx, neighbours, per_point):
        mates = nb[is_minority[nb]]
        for _ in range(g):
            # no minority neighbour: duplicate the point itself
            z = int(mates[rng.integers(len(mates))]) if len(mates) else int(i)
            lam = float(rng.random())
            synthetic.append(X[i] + lam * (X[z] - X[i]))
            parents.append((int(i), z, lam))

    n_new = len(synthetic)
    new_ids = _fresh_ids(set(dataset.row_ids) | set(reserved_ids), n_new)
    if audit is not None:
        for row_id, (a, b, lam) in zip(new_ids, parents):
            audit.append(SyntheticRecord(row_id, dataset.row_ids[a], dataset.row_ids[b], lam))

    logger.info(
        f"[ADASYN] minority={minority_label} m_s={m_s} m_l={m_l} G={total:.1f} "
        f"generated {n_new} synthetic rows (k={cfg.k}, beta={cfg.beta})"
    )
    if n_new == 0:
        return dataset
    matrix = np.vstack([X, np.array(synthetic)])
    labels = np.concatenate([dataset.labels, np.full(n_new, minority_label, dtype=np.int64)])
    return LabeledDataset(matrix, labels, dataset.column_names, dataset.row_ids + tuple(new_ids))


def write_audit(records: List[SyntheticRecord], path: str, header: Optional[str] = None) -> None:
    """Write synthetic_row_id,parent_a,parent_b,lambda rows."""
    with open(path, "w", newline="", encoding="utf-8") as f:
        if header:
            f.write(header + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["synthetic_row_id", "parent_a", "parent_b", "lambda"])
        for rec in records:
            writer.writerow([rec.synthetic_row_id, rec.parent_a, rec.parent_b, repr(rec.lam)])


def class_share(labels: np.ndarray) -> float:
    """Fraction of malware (label 1) rows."""
    return float(np.mean(np.asarray(labels) == 1))


def prior_shift(proba: np.ndarray, trained_share: float, target_share: float) -> np.ndarray:
    """
    Move malware probabilities from the class share a model was fitted at to
    another share.

    Oversampling trains at a near-even share; shifting back to the share of
    the unbalanced training block makes 1[proba >= 0.5] follow that prior.

    Raises:
        SingleClass: either share is 0 or 1
    """
    for share in (trained_share, target_share):
        if not 0.0 < share < 1.0:
            raise SingleClass(f"class share must lie strictly between 0 and 1, got {share}")
    pos = np.asarray(proba, dtype=np.float64) * (target_share / trained_share)
    neg = (1.0 - np.asarray(proba, dtype=np.float64)) * ((1.0 - target_share) / (1.0 - trained_share))
    return pos / (pos + neg)
