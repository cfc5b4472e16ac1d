"""
Labeled feature matrices: assembly from histograms, CSV persistence, and
synthetic desk-scale corpora.

On-disk format (one header comment line is optional):
    # config_hash=... master_seed=...
    row_id,label,<opcode_1>,...,<opcode_N>
    <id>,<0|1>,<value>,...

Labels: 1 = malware (positive class), 0 = benign.
"""

import csv
import logging
import math
import os
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np

import config
from utilities.disasm_ingest import FeatureVector
from utilities.errors import DimensionMismatch, FormatViolation, InvalidLabel, MissingLabel, SingleClass

logger = logging.getLogger(__name__)

MALWARE = 1
BENIGN = 0
LABEL_DIRS = {"malware": MALWARE, "benign": BENIGN}


@dataclass(frozen=True, eq=False)
class LabeledDataset:
    matrix: np.ndarray
    labels: np.ndarray
    column_names: tuple
    row_ids: tuple

    def __post_init__(self):
        if self.matrix.ndim != 2:
            raise DimensionMismatch(f"matrix must be 2-D, got {self.matrix.ndim}-D")
        rows, cols = self.matrix.shape
        if rows != len(self.labels) or rows != len(self.row_ids):
            raise DimensionMismatch(
                f"{rows} matrix rows vs {len(self.labels)} labels vs {len(self.row_ids)} row ids"
            )
        if cols != len(self.column_names):
            raise DimensionMismatch(f"{cols} matrix columns vs {len(self.column_names)} column names")
        if self.labels.ndim != 1:
            raise DimensionMismatch(f"labels must be 1-D, got {self.labels.ndim}-D")
        bad = np.flatnonzero((self.labels != BENIGN) & (self.labels != MALWARE))
        if len(bad):
            raise InvalidLabel(f"label {self.labels[bad[0]]!r} for row {self.row_ids[bad[0]]!r} is not 0 or 1")

    @property
    def n_rows(self) -> int:
        return self.matrix.shape[0]

    @property
    def n_columns(self) -> int:
        return self.matrix.shape[1]

    def class_counts(self) -> Dict[int, int]:
        return {BENIGN: int(np.sum(self.labels == BENIGN)), MALWARE: int(np.sum(self.labels == MALWARE))}

    def require_both_classes(self) -> None:
        counts = self.class_counts()
        if counts[BENIGN] == 0 or counts[MALWARE] == 0:
            raise SingleClass(f"dataset needs both classes, has {counts}")

    def take(self, indices: Sequence[int]) -> "LabeledDataset":
        """Row subset in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(
            self.matrix[idx],
            self.labels[idx],
            self.column_names,
            tuple(self.row_ids[i] for i in idx),
        )

    def with_features(self, matrix: np.ndarray, column_names: Sequence[str]) -> "LabeledDataset":
        """Same rows and labels over a new feature space."""
        return LabeledDataset(np.asarray(matrix, dtype=np.float64), self.labels, tuple(column_names), self.row_ids)

    def __eq__(self, other) -> bool:
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.column_names == other.column_names
            and self.row_ids == other.row_ids
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.matrix, other.matrix)
        )


def make_dataset(matrix, labels, column_names, row_ids) -> LabeledDataset:
    return LabeledDataset(
        np.asarray(matrix, dtype=np.float64).reshape(len(row_ids), len(column_names)),
        np.asarray(labels, dtype=np.int64),
        tuple(column_names),
        tuple(row_ids),
    )


# ============================================================================
# Assembly
# ============================================================================

def assemble(
    vectors: Sequence[FeatureVector],
    labels: Mapping[str, int],
    column_names: Sequence[str],
) -> LabeledDataset:
    """
    Stack feature vectors into a labeled matrix.

    Args:
        vectors: Histograms over one shared master list, in row order
        labels: file_id -> 0/1
        column_names: The master list opcodes

    Returns:
        LabeledDataset with row i = vectors[i]

    Raises:
        MissingLabel: a vector's file_id has no label
        DimensionMismatch: a vector's length differs from the master list
        InvalidLabel: a label is not 0 or 1
    """
    width = len(column_names)
    matrix = np.zeros((len(vectors), width), dtype=np.float64)
    row_labels = np.zeros(len(vectors), dtype=np.int64)
    for i, vec in enumerate(vectors):
        if vec.file_id not in labels:
            raise MissingLabel(vec.file_id)
        if len(vec.counts) != width:
            raise DimensionMismatch(f"{vec.file_id}: {len(vec.counts)} counts vs {width} opcodes")
        matrix[i] = vec.counts
        row_labels[i] = labels[vec.file_id]
    return LabeledDataset(matrix, row_labels, tuple(column_names), tuple(v.file_id for v in vectors))


def labels_from_layout(file_ids: Sequence[str]) -> Dict[str, int]:
    """Label file_ids by their top-level directory (malware/ or benign/)."""
    labels = {}
    for file_id in file_ids:
        top = file_id.split("/", 1)[0].lower()
        if top in LABEL_DIRS:
            labels[file_id] = LABEL_DIRS[top]
    return labels


def read_labels(path: str) -> Dict[str, int]:
    """Read a file_id,label CSV (header optional, comment lines skipped)."""
    labels = {}
    with open(path, "r", newline="", encoding="utf-8") as f:
        for line_no, row in enumerate(csv.reader(f), start=1):
            if not row or row[0].startswith("#") or row[:2] == ["file_id", "label"]:
                continue
            if len(row) != 2 or row[1] not in ("0", "1"):
                raise FormatViolation(f"expected file_id,label with label 0/1, got {row}", line_no)
            labels[row[0]] = int(row[1])
    return labels


# ============================================================================
# Persistence
# ============================================================================

def _format_value(x: float) -> str:
    if float(x).is_integer():
        return str(int(x))
    return repr(float(x))


def persist(dataset: LabeledDataset, path: str, header: Optional[str] = None) -> None:
    """
    Write a dataset as CSV.

    Args:
        dataset: The dataset to write
        path: Output path
        header: Optional comment line written first (must start with '#')
    """
    parent = os.path.dirname(path)
    if parent:
        os.makedirs(parent, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        if header:
            f.write(header + "\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(["row_id", "label", *dataset.column_names])
        for row_id, label, values in zip(dataset.row_ids, dataset.labels, dataset.matrix):
            writer.writerow([row_id, int(label), *(_format_value(v) for v in values)])


def load(path: str) -> LabeledDataset:
    """
    Read a dataset written by persist().

    Raises:
        FormatViolation: with the 1-based line number of the first bad line
    """
    row_ids: List[str] = []
    labels: List[int] = []
    rows: List[List[float]] = []
    columns: Optional[List[str]] = None
    seen = set()

    with open(path, "r", newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        for row in reader:
            line_no = reader.line_num
            if columns is None:
                if row and row[0].startswith("#"):
                    continue
                if len(row) < 2 or row[0] != "row_id" or row[1] != "label":
                    raise FormatViolation("header must start with row_id,label", line_no)
                columns = row[2:]
                continue
            if not row:
                continue
            if len(row) != len(columns) + 2:
                raise FormatViolation(f"expected {len(columns) + 2} fields, got {len(row)}", line_no)
            if row[1] not in ("0", "1"):
                raise FormatViolation(f"label must be 0 or 1, got {row[1]!r}", line_no)
            if row[0] in seen:
                raise FormatViolation(f"duplicate row_id {row[0]!r}", line_no)
            try:
                values = [float(v) for v in row[2:]]
            except ValueError as e:
                raise FormatViolation(f"non-numeric value: {e}", line_no) from e
            if not all(math.isfinite(v) for v in values):
                raise FormatViolation("non-finite value", line_no)
            seen.add(row[0])
            row_ids.append(row[0])
            labels.append(int(row[1]))
            rows.append(values)

    if columns is None:
        raise FormatViolation("missing header line", 1)
    matrix = np.array(rows, dtype=np.float64).reshape(len(rows), len(columns))
    return LabeledDataset(matrix, np.array(labels, dtype=np.int64), tuple(columns), tuple(row_ids))


# ============================================================================
# Synthetic corpus
# ============================================================================

def class_profiles(n_opcodes: int, separation: float, rng: np.random.Generator):
    """
    Benign and malware opcode distributions.

    The malware profile is (1 - separation) * benign + separation * alt, so
    the total-variation distance between the two is separation * TV(benign, alt).
    """
    benign = rng.dirichlet(np.ones(n_opcodes))
    alt = rng.dirichlet(np.ones(n_opcodes))
    malware = (1.0 - separation) * benign + separation * alt
    return benign, malware / malware.sum()


def synth_corpus(
    n_minority: int,
    n_majority: int,
    n_opcodes: int,
    separation: float,
    seed: int,
    row_total: int = config.SYNTH_ROW_TOTAL,
) -> LabeledDataset:
    """
    Generate a two-class multinomial opcode-count corpus.

    Benign files form the minority block (first rows), malware the majority
    block, mirroring the class skew of the source corpus.

    Args:
        n_minority: Benign row count (>= 1)
        n_majority: Malware row count (>= 1)
        n_opcodes: Number of opcode columns (>= 2)
        separation: 0 = identical class profiles, 1 = fully mixed-in alt profile
        seed: RNG seed
        row_total: Tokens per synthetic file

    Returns:
        LabeledDataset with synthetic opcode names op000, op001, ...
    """
    if n_minority < 1 or n_majority < 1:
        raise DimensionMismatch("both classes need at least one row")
    if n_opcodes < 2:
        raise DimensionMismatch("need at least two opcodes")
    if not 0.0 <= separation <= 1.0:
        raise DimensionMismatch(f"separation must lie in [0, 1], got {separation}")

    rng = np.random.default_rng(seed)
    benign_p, malware_p = class_profiles(n_opcodes, separation, rng)
    benign_rows = rng.multinomial(row_total, benign_p, size=n_minority)
    malware_rows = rng.multinomial(row_total, malware_p, size=n_majority)

    width = len(str(n_opcodes - 1))
    columns = tuple(f"op{j:0{max(3, width)}d}" for j in range(n_opcodes))
    row_ids = tuple(f"benign-{i:05d}" for i in range(n_minority)) + tuple(
        f"malware-{i:05d}" for i in range(n_majority)
    )
    labels = np.concatenate([np.full(n_minority, BENIGN), np.full(n_majority, MALWARE)])
    matrix = np.vstack([benign_rows, malware_rows]).astype(np.float64)
    logger.info(
        f"[SYNTH] {n_minority} benign + {n_majority} malware rows over {n_opcodes} opcodes, "
        f"separation {separation}"
    )
    return LabeledDataset(matrix, labels.astype(np.int64), columns, row_ids)
