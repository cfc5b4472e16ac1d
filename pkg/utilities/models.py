"""
Classifiers behind one interface: random forest (Gini trees on bootstrap
resamples) and the DNN-2L/4L/7L feed-forward networks.

Positive class is malware (1). predict() labels a row 1 iff its
probability is >= 0.5. A classifier with a target_share reports
probabilities shifted from its training class share to that share.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import Dict, List, Literal, Optional, Tuple

import numpy as np
from pydantic import BaseModel, Field

import config
from utilities import artifacts
from utilities.balance import class_share, prior_shift
from utilities.errors import ArtifactError, ShapeMismatch
from utilities.featurize import LabeledDataset
from utilities.neural import (
    InputScaler,
    Network,
    NetworkSpec,
    TrainConfig,
    TrainingTrace,
    forward,
    network_arrays,
    network_from_arrays,
    train,
)
from utilities.reduce import ReducerModel, reducer_from_payload, reducer_payload

logger = logging.getLogger(__name__)

DnnDepth = Literal["dnn_2l", "dnn_4l", "dnn_7l"]
CLASSIFIER_KINDS = ("rf", "dnn_2l", "dnn_4l", "dnn_7l")
# short names accepted on the command line
CLASSIFIER_ALIASES = {"rf": "rf", "dnn2": "dnn_2l", "dnn4": "dnn_4l", "dnn7": "dnn_7l"}

TREE_FIELDS = ("feature", "threshold", "left", "right", "value")


# ============================================================================
# Config Models
# ============================================================================

class RandomForestConfig(BaseModel):
    n_trees: int = Field(default=config.RF_TREES, ge=1)
    max_depth: Optional[int] = Field(default=None, ge=1)
    min_samples_split: int = Field(default=config.RF_MIN_SAMPLES_SPLIT, ge=2)
    # None -> ceil(sqrt(p))
    features_per_split: Optional[int] = Field(default=None, ge=1)
    bootstrap: bool = True
    seed: int = config.MASTER_SEED

    def split_features(self, p: int) -> int:
        m = self.features_per_split if self.features_per_split is not None else math.ceil(math.sqrt(p))
        return max(1, min(m, p))


class DnnSpec(BaseModel):
    depth: DnnDepth = "dnn_2l"
    dropout: float = Field(default=config.DNN_DROPOUT, ge=0.0, lt=1.0)
    loss: Literal["binary_cross_entropy"] = "binary_cross_entropy"

    @property
    def hidden_widths(self) -> Tuple[int, ...]:
        return config.DNN_HIDDEN[self.depth]

    def network_spec(self, input_width: int) -> NetworkSpec:
        hidden = list(self.hidden_widths)
        return NetworkSpec(
            layer_widths=[input_width, *hidden, 1],
            activations=["elu"] * len(hidden) + ["sigmoid"],
            dropout_rate=self.dropout,
            loss=self.loss,
        )


# ============================================================================
# Decision tree
# ============================================================================

@dataclass
class DecisionTree:
    """Flat node arrays; feature == -1 marks a leaf. value = class-1 proportion."""
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    def depth(self) -> int:
        deepest = 0
        stack = [(0, 0)]
        while stack:
            node, d = stack.pop()
            deepest = max(deepest, d)
            if self.feature[node] >= 0:
                stack.extend([(self.left[node], d + 1), (self.right[node], d + 1)])
        return deepest

    def predict_proba(self, matrix: np.ndarray) -> np.ndarray:
        node = np.zeros(matrix.shape[0], dtype=np.int64)
        rows = np.arange(matrix.shape[0])
        while True:
            feat = self.feature[node]
            active = feat >= 0
            if not active.any():
                break
            a_rows, a_nodes = rows[active], node[active]
            go_left = matrix[a_rows, feat[active]] <= self.threshold[a_nodes]
            node[active] = np.where(go_left, self.left[a_nodes], self.right[a_nodes])
        return self.value[node]


def _gini(pos: np.ndarray, n: np.ndarray) -> np.ndarray:
    p = pos / n
    return 1.0 - p * p - (1.0 - p) * (1.0 - p)


def best_split(X: np.ndarray, y: np.ndarray, idx: np.ndarray, features) -> Optional[Tuple[int, float]]:
    """
    Maximum Gini-decrease split over the given columns.

    Candidate thresholds are midpoints between consecutive distinct values.
    Ties go to the lower column index, then the lower threshold.
    """
    n = len(idx)
    labels = y[idx]
    total_pos = labels.sum()
    parent = _gini(np.array([total_pos], dtype=np.float64), np.array([n], dtype=np.float64))[0]
    best_gain = -np.inf
    best = None
    for f in sorted(int(f) for f in features):
        col = X[idx, f]
        order = np.argsort(col, kind="stable")
        xs = col[order]
        boundaries = np.flatnonzero(xs[:-1] < xs[1:])
        if len(boundaries) == 0:
            continue
        pos_left = np.cumsum(labels[order])[boundaries].astype(np.float64)
        n_left = (boundaries + 1).astype(np.float64)
        n_right = n - n_left
        weighted = (n_left * _gini(pos_left, n_left) + n_right * _gini(total_pos - pos_left, n_right)) / n
        gains = parent - weighted
        j = int(np.argmax(gains))
        if gains[j] > best_gain:
            lo, hi = xs[boundaries[j]], xs[boundaries[j] + 1]
            mid = (lo + hi) / 2.0
            best_gain = gains[j]
            best = (f, float(mid if mid < hi else lo))
    return best


def train_tree(
    rows: np.ndarray,
    labels: np.ndarray,
    cfg: RandomForestConfig,
    rng: Optional[np.random.Generator] = None,
) -> DecisionTree:
    """
    Grow one Gini decision tree.

    Args:
        rows: (n, p) feature matrix, n >= 1
        labels: 0/1 labels
        cfg: Depth, min split size and features per split
        rng: Column sampler (default: seeded from cfg.seed)

    Returns:
        DecisionTree; a pure node becomes a leaf
    """
    X = np.asarray(rows, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    p = X.shape[1]
    m = cfg.split_features(p)

    feature: List[int] = []
    threshold: List[float] = []
    left: List[int] = []
    right: List[int] = []
    value: List[float] = []

    def new_node(idx: np.ndarray) -> int:
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        value.append(float(y[idx].mean()))
        return len(feature) - 1

    root = np.arange(X.shape[0])
    stack = [(new_node(root), root, 0)]
    while stack:
        node, idx, depth = stack.pop()
        pos = y[idx].sum()
        if pos == 0 or pos == len(idx):
            continue
        if len(idx) < cfg.min_samples_split:
            continue
        if cfg.max_depth is not None and depth >= cfg.max_depth:
            continue
        columns = rng.choice(p, size=m, replace=False)
        split = best_split(X, y, idx, columns)
        if split is None:
            continue
        f, thr = split
        goes_left = X[idx, f] <= thr
        left_idx, right_idx = idx[goes_left], idx[~goes_left]
        feature[node] = f
        threshold[node] = thr
        left[node] = new_node(left_idx)
        right[node] = new_node(right_idx)
        # right pushed first so the left subtree is grown first
        stack.append((right[node], right_idx, depth + 1))
        stack.append((left[node], left_idx, depth + 1))

    return DecisionTree(
        np.array(feature, dtype=np.int64),
        np.array(threshold, dtype=np.float64),
        np.array(left, dtype=np.int64),
        np.array(right, dtype=np.int64),
        np.array(value, dtype=np.float64),
    )


# ============================================================================
# Classifier
# ============================================================================

@dataclass
class Classifier:
    kind: str
    input_width: int
    trees: List[DecisionTree] = field(default_factory=list)
    network: Optional[Network] = None
    scaler: Optional[InputScaler] = None
    trace: Optional[TrainingTrace] = None
    metadata: Dict = field(default_factory=dict)
    # fitted reducer applied to raw features before this classifier (CLI provenance)
    reducer: Optional[ReducerModel] = None
    # malware share of the rows it was fitted on
    train_share: float = 0.5
    target_share: Optional[float] = None


def train_random_forest(dataset: LabeledDataset, cfg: RandomForestConfig) -> Classifier:
    """
    Random forest on bootstrap resamples with per-tree RNG streams.

    Raises:
        SingleClass: dataset lacks one class
    """
    dataset.require_both_classes()
    X, y = dataset.matrix, dataset.labels
    n = X.shape[0]
    trees = []
    for child in np.random.SeedSequence(cfg.seed).spawn(cfg.n_trees):
        rng = np.random.default_rng(child)
        sample = rng.integers(0, n, size=n) if cfg.bootstrap else np.arange(n)
        trees.append(train_tree(X[sample], y[sample], cfg, rng))
    logger.info(
        f"[FOREST] {cfg.n_trees} trees on {n}x{X.shape[1]}, "
        f"{cfg.split_features(X.shape[1])} features/split, mean nodes "
        f"{np.mean([t.n_nodes for t in trees]):.1f}"
    )
    return Classifier(
        "rf",
        X.shape[1],
        trees=trees,
        metadata={"seed": cfg.seed, "config": cfg.model_dump()},
        train_share=class_share(y),
    )


def train_dnn(
    dataset: LabeledDataset,
    spec: DnnSpec,
    cfg: TrainConfig,
    log_transform: bool = True,
    epochs: Optional[int] = None,
) -> Classifier:
    """
    Train a DNN classifier on scaled features.

    Args:
        dataset: Two-class training data
        spec: Depth tag and dropout
        cfg: Training regimen
        log_transform: Apply log1p before min-max (count features only)
        epochs: Override cfg.epochs; 0 leaves the network at its initialisation

    Raises:
        SingleClass: dataset lacks one class
        NonFiniteLoss: training diverged
    """
    dataset.require_both_classes()
    scaler = InputScaler.fit(dataset.matrix, log_transform=log_transform)
    net_spec = spec.network_spec(dataset.n_columns)
    network, trace = train(net_spec, scaler.transform(dataset.matrix), dataset.labels.astype(np.float64), cfg, epochs=epochs)
    return Classifier(
        spec.depth,
        dataset.n_columns,
        network=network,
        scaler=scaler,
        trace=trace,
        metadata={"seed": cfg.seed, "config": cfg.model_dump(), "spec": spec.model_dump()},
        train_share=class_share(dataset.labels),
    )


def tree_probas(classifier: Classifier, matrix: np.ndarray) -> np.ndarray:
    """Per-tree class-1 probabilities, shape (n_trees, rows)."""
    return np.array([tree.predict_proba(matrix) for tree in classifier.trees])


def predict(classifier: Classifier, matrix: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """
    Score rows.

    Returns:
        Tuple of (probabilities in [0, 1], labels = 1[proba >= 0.5]);
        probabilities are prior-shifted when target_share is set

    Raises:
        ShapeMismatch: matrix width differs from the classifier's input width
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != classifier.input_width:
        raise ShapeMismatch(f"matrix shape {matrix.shape} vs classifier width {classifier.input_width}")
    if classifier.kind == "rf":
        proba = tree_probas(classifier, matrix).mean(axis=0)
    else:
        out, _ = forward(classifier.network, classifier.scaler.transform(matrix), "infer")
        proba = out[:, 0]
    if classifier.target_share is not None:
        proba = prior_shift(proba, classifier.train_share, classifier.target_share)
    labels = (proba >= config.DECISION_THRESHOLD).astype(np.int64)
    return proba, labels


# ============================================================================
# Persistence
# ============================================================================

def save_classifier(classifier: Classifier, path: str) -> None:
    header = {"kind": classifier.kind, "input_width": classifier.input_width, "metadata": classifier.metadata,
        "train_share": classifier.train_share,
        "target_share": classifier.target_share,
    }
    arrays = {}
    if classifier.kind == "rf":
        header["n_trees"] = len(classifier.trees)
        for i, tree in enumerate(classifier.trees):
            for name in TREE_FIELDS:
                arrays[f"t{i}_{name}"] = getattr(tree, name).astype(np.float64)
    else:
        header["spec"] = classifier.network.spec.model_dump()
        header["log_transform"] = classifier.scaler.log_transform
        arrays["mins"] = classifier.scaler.mins
        arrays["spans"] = classifier.scaler.spans
        arrays.update(network_arrays(classifier.network))
    if classifier.reducer is not None:
        reducer_header, reducer_arrays = reducer_payload(classifier.reducer, "rd_")
        header["reducer"] = reducer_header
        arrays.update(reducer_arrays)
    artifacts.write(path, artifacts.CLASSIFIER_MAGIC, header, arrays)


def load_classifier(path: str) -> Classifier:
    header, arrays = artifacts.read(path, artifacts.CLASSIFIER_MAGIC)
    kind = header.get("kind")
    if kind not in CLASSIFIER_KINDS:
        raise ArtifactError(f"unknown classifier kind {kind!r}")
    classifier = Classifier(kind, int(header["input_width"]), metadata=header.get("metadata", {}),
        train_share=float(header.get("train_share", 0.5)),
        target_share=header.get("target_share"),
    )
    if kind == "rf":
        for i in range(int(header["n_trees"])):
            f, thr, lft, rgt, val = (arrays[f"t{i}_{name}"] for name in TREE_FIELDS)
            classifier.trees.append(
                DecisionTree(f.astype(np.int64), thr, lft.astype(np.int64), rgt.astype(np.int64), val)
            )
    else:
        classifier.network = network_from_arrays(NetworkSpec(**header["spec"]), arrays)
        classifier.scaler = InputScaler(arrays["mins"], arrays["spans"], bool(header["log_transform"]))
    if "reducer" in header:
        classifier.reducer = reducer_from_payload(header["reducer"], arrays, "rd_")
    return classifier
