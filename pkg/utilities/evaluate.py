"""
Cross-validated evaluation harness.

Per fold: split -> ADASYN on the training block only -> fit each reducer on
the balanced training block -> reduce train and test -> train each
classifier -> score the test block. Scores are prior-shifted from the
balanced share back to the training block's own malware share. Aggregate
rows are computed from the summed fold confusions. Every fit call records
the row_ids it saw so the leakage guard can prove no test row reached a fit.
"""

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from pydantic import BaseModel, Field

import config
from utilities.balance import AdasynConfig, adasyn, class_share
from utilities.errors import ConfigError, GridCellError, LeakageDetected, LengthMismatch, OpclassError, TooFewRows
from utilities.featurize import LabeledDataset
from utilities.models import CLASSIFIER_KINDS, DnnSpec, RandomForestConfig, predict, train_dnn, train_random_forest
from utilities.neural import TrainConfig, TrainingTrace
from utilities.reduce import ReducerModel, ReducerSpec, apply_dataset, fit
from utilities.seeds import derive_seed

logger = logging.getLogger(__name__)

REDUCER_KINDS = ("none", "variance_threshold", "ae_1l", "ae_3l")
COUNT_SPACE_REDUCERS = ("none", "variance_threshold")


# ============================================================================
# Folds
# ============================================================================

@dataclass(frozen=True, eq=False)
class FoldPlan:
    k: int
    assignment: np.ndarray
    seed: int

    def test_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def sizes(self) -> List[int]:
        return [int(np.sum(self.assignment == i)) for i in range(self.k)]


def kfold_split(
    n_rows: int,
    k: int,
    seed: int,
    labels: Optional[np.ndarray] = None,
    stratified: bool = False,
) -> FoldPlan:
    """
    Assign rows to k folds.

    Plain mode shuffles once and cuts the permutation into k contiguous
    blocks (sizes differ by at most one). Stratified mode shuffles within
    each class and deals rows round-robin.

    Raises:
        TooFewRows: n_rows < k
    """
    if k < 2:
        raise TooFewRows(f"need at least 2 folds, got {k}")
    if n_rows < k:
        raise TooFewRows(f"{n_rows} rows cannot fill {k} folds")
    rng = np.random.default_rng(seed)
    assignment = np.empty(n_rows, dtype=np.int64)
    if stratified and labels is not None:
        order = np.concatenate([rng.permutation(np.flatnonzero(labels == c)) for c in np.unique(labels)])
        assignment[order] = np.arange(n_rows) % k
    else:
        for fold, block in enumerate(np.array_split(rng.permutation(n_rows), k)):
            assignment[block] = fold
    return FoldPlan(k, assignment, seed)


# ============================================================================
# Confusion and metrics
# ============================================================================

@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int = 0
    fn: int = 0
    tn: int = 0
    fp: int = 0

    @property
    def total(self) -> int:
        return self.tp + self.fn + self.tn + self.fp

    def __add__(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.tp + other.tp, self.fn + other.fn, self.tn + other.tn, self.fp + other.fp)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    tpr: float
    tnr: float
    ppv: float
    # names of metrics whose denominator was zero (reported as 0)
    undefined: Tuple[str, ...] = ()

    def as_percent(self) -> Tuple[float, float, float, float]:
        return (100 * self.accuracy, 100 * self.tpr, 100 * self.tnr, 100 * self.ppv)


def confusion(truth: Sequence[int], predicted: Sequence[int]) -> ConfusionMatrix:
    """
    Count outcomes with malware (1) as the positive class.

    Raises:
        LengthMismatch: truth and predicted differ in length
    """
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    if truth.shape != predicted.shape:
        raise LengthMismatch(f"{truth.shape} truth labels vs {predicted.shape} predictions")
    return ConfusionMatrix(
        tp=int(np.sum((truth == 1) & (predicted == 1))),
        fn=int(np.sum((truth == 1) & (predicted == 0))),
        tn=int(np.sum((truth == 0) & (predicted == 0))),
        fp=int(np.sum((truth == 0) & (predicted == 1))),
    )


def metrics(cm: ConfusionMatrix) -> Metrics:
    undefined = []

    def ratio(name: str, num: int, den: int) -> float:
        if den == 0:
            undefined.append(name)
            return 0.0
        return num / den

    values = (
        ratio("accuracy", cm.tp + cm.tn, cm.total),
        ratio("tpr", cm.tp, cm.tp + cm.fn),
        ratio("tnr", cm.tn, cm.tn + cm.fp),
        ratio("ppv", cm.tp, cm.tp + cm.fp),
    )
    return Metrics(*values, undefined=tuple(undefined))


def nearest_centroid(train: LabeledDataset, test: LabeledDataset) -> np.ndarray:
    """Label each test row with the class of the nearer training centroid (ties -> malware)."""
    c_benign = train.matrix[train.labels == 0].mean(axis=0)
    c_malware = train.matrix[train.labels == 1].mean(axis=0)
    d_benign = np.sum((test.matrix - c_benign) ** 2, axis=1)
    d_malware = np.sum((test.matrix - c_malware) ** 2, axis=1)
    return (d_malware <= d_benign).astype(np.int64)


# ============================================================================
# Fit logging (leakage guard)
# ============================================================================

@dataclass(frozen=True)
class FitRecord:
    stage: str
    coordinate: Tuple
    fold: int
    row_ids: frozenset


class FitLog:
    """Thread-safe record of every fit call's input rows."""

    def __init__(self):
        self._lock = threading.Lock()
        self.records: List[FitRecord] = []

    def record(self, stage: str, coordinate: Tuple, fold: int, row_ids: Sequence[str]) -> None:
        with self._lock:
            self.records.append(FitRecord(stage, tuple(coordinate), fold, frozenset(row_ids)))


def check_leakage(fit_log: FitLog, plan: FoldPlan, dataset: LabeledDataset) -> int:
    """
    Verify that no fit saw a row from its fold's test block.

    Returns:
        Number of fit records checked

    Raises:
        LeakageDetected: a fit input overlaps its fold's test row_ids
    """
    test_ids = {fold: {dataset.row_ids[i] for i in plan.test_indices(fold)} for fold in range(plan.k)}
    for rec in fit_log.records:
        overlap = rec.row_ids & test_ids[rec.fold]
        if overlap:
            raise LeakageDetected(f"{rec.stage} {rec.coordinate} saw {len(overlap)} test rows")
    return len(fit_log.records)


# ============================================================================
# Experiment
# ============================================================================

class ExperimentSettings(BaseModel):
    """Everything run_experiment needs besides the data and the grid."""
    seed: int = config.MASTER_SEED
    folds: int = Field(default=config.FOLDS, ge=2)
    stratified: bool = False
    jobs: int = Field(default=config.JOBS, ge=1)
    adasyn: AdasynConfig = Field(default_factory=AdasynConfig)
    vt_threshold: float = Field(default=config.VT_THRESHOLD, ge=0.0)
    autoencoder: TrainConfig = Field(default_factory=TrainConfig)
    dnn: TrainConfig = Field(default_factory=TrainConfig)
    dnn_dropout: float = Field(default=config.DNN_DROPOUT, ge=0.0, lt=1.0)
    forest: RandomForestConfig = Field(default_factory=RandomForestConfig)
    # shift classifier scores back to the unbalanced training share
    prior_correction: bool = True


@dataclass
class FoldResult:
    reducer: str
    classifier: str
    fold: int
    confusion: ConfusionMatrix
    metrics: Metrics


@dataclass
class CellResult:
    reducer: str
    classifier: str
    confusion: ConfusionMatrix
    metrics: Metrics


@dataclass
class EvaluationReport:
    reducers: List[str]
    classifiers: List[str]
    plan: FoldPlan
    folds: List[FoldResult] = field(default_factory=list)
    aggregates: List[CellResult] = field(default_factory=list)
    # (reducer, "ae", fold) or (reducer, classifier, fold) -> trace
    traces: Dict[Tuple[str, str, int], TrainingTrace] = field(default_factory=dict)
    baseline_folds: List[ConfusionMatrix] = field(default_factory=list)
    fit_checks: int = 0

    @property
    def baseline(self) -> Metrics:
        total = ConfusionMatrix()
        for cm in self.baseline_folds:
            total = total + cm
        return metrics(total)

    def aggregate(self, reducer: str, classifier: str) -> CellResult:
        for cell in self.aggregates:
            if cell.reducer == reducer and cell.classifier == classifier:
                return cell
        raise KeyError((reducer, classifier))

    def best_cells(self) -> Dict[str, CellResult]:
        """Best grid cell per metric (first in grid order on ties)."""
        best = {}
        for name in ("accuracy", "tpr", "tnr", "ppv"):
            best[name] = max(self.aggregates, key=lambda c: getattr(c.metrics, name))
        return best


def _run_tasks(tasks: List[Tuple[Tuple, Callable]], jobs: int) -> List:
    """Run (coordinate, thunk) tasks, preserving order; wraps errors with the coordinate."""

    def guarded(task):
        coordinate, thunk = task
        try:
            return thunk()
        except GridCellError:
            raise
        except OpclassError as e:
            raise GridCellError(coordinate, e) from e

    if jobs <= 1:
        return [guarded(task) for task in tasks]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(guarded, tasks))


def run_experiment(
    dataset: LabeledDataset,
    reducers: Sequence[str],
    classifiers: Sequence[str],
    settings: ExperimentSettings,
    fit_log: Optional[FitLog] = None,
) -> EvaluationReport:
    """
    Run the reducer x classifier grid under k-fold cross-validation.

    Args:
        dataset: Raw opcode-count dataset with both classes
        reducers: Reducer kinds, in report order
        classifiers: Classifier kinds, in report order
        settings: Component configs, fold count, master seed, jobs
        fit_log: Optional log receiving every fit call's input row_ids

    Returns:
        EvaluationReport with fold rows, aggregate rows, traces and baseline

    Raises:
        SingleClass: dataset lacks a class
        ConfigError: unknown or repeated grid entries
        GridCellError: a component failed; carries (reducer, classifier, fold)
        LeakageDetected: a fit saw test rows (never expected)
    """
    dataset.require_both_classes()
    unknown = [r for r in reducers if r not in REDUCER_KINDS] + [c for c in classifiers if c not in CLASSIFIER_KINDS]
    if unknown:
        raise ConfigError(f"unknown grid entries: {unknown}")
    repeated = [n for axis in (reducers, classifiers) for n in dict.fromkeys(axis) if list(axis).count(n) > 1]
    if repeated:
        raise ConfigError(f"grid entries listed more than once: {repeated}")
    fit_log = fit_log if fit_log is not None else FitLog()
    master = settings.seed
    plan = kfold_split(
        dataset.n_rows, settings.folds, derive_seed(master, "folds"), dataset.labels, settings.stratified
    )
    report = EvaluationReport(list(reducers), list(classifiers), plan)
    logger.info(
        f"[EVAL] {len(reducers)} reducers x {len(classifiers)} classifiers x {plan.k} folds "
        f"on {dataset.n_rows} rows (fold sizes {plan.sizes()})"
    )

    # Stage 1: split and balance each fold
    def balance_fold(fold: int):
        train = dataset.take(plan.train_indices(fold))
        test = dataset.take(plan.test_indices(fold))
        fit_log.record("adasyn", ("adasyn", fold), fold, train.row_ids)
        cfg = settings.adasyn.model_copy(update={"seed": derive_seed(master, "adasyn", fold)})
        balanced = adasyn(train, cfg, reserved_ids=dataset.row_ids)
        fit_log.record("baseline", ("nearest_centroid", fold), fold, train.row_ids)
        baseline = confusion(test.labels, nearest_centroid(train, test))
        return balanced, test, baseline, class_share(train.labels)

    fold_data = _run_tasks(
        [(("adasyn", "-", fold), lambda fold=fold: balance_fold(fold)) for fold in range(plan.k)],
        settings.jobs,
    )
    report.baseline_folds = [baseline for _, _, baseline, _ in fold_data]

    # Stage 2: fit and apply each reducer per fold
    def reduce_fold(kind: str, fold: int):
        balanced, test, _, _ = fold_data[fold]
        spec = ReducerSpec(
            kind=kind,
            threshold=settings.vt_threshold,
            train=settings.autoencoder.model_copy(update={"seed": derive_seed(master, "reducer", kind, fold)}),
        )
        fit_log.record("reducer", (kind, fold), fold, balanced.row_ids)
        model: ReducerModel = fit(spec, balanced.matrix)
        return model, apply_dataset(model, balanced), apply_dataset(model, test)

    reduce_keys = [(kind, fold) for kind in reducers for fold in range(plan.k)]
    reduced = dict(
        zip(
            reduce_keys,
            _run_tasks(
                [((kind, "-", fold), lambda k=kind, f=fold: reduce_fold(k, f)) for kind, fold in reduce_keys],
                settings.jobs,
            ),
        )
    )
    for (kind, fold), (model, _, _) in reduced.items():
        if model.trace is not None:
            report.traces[(kind, "ae", fold)] = model.trace

    # Stage 3: train and score every cell
    def score_cell(kind: str, clf: str, fold: int):
        _, train, test = reduced[(kind, fold)]
        seed = derive_seed(master, "classifier", kind, clf, fold)
        fit_log.record("classifier", (kind, clf, fold), fold, train.row_ids)
        if clf == "rf":
            model = train_random_forest(train, settings.forest.model_copy(update={"seed": seed}))
        else:
            model = train_dnn(
                train,
                DnnSpec(depth=clf, dropout=settings.dnn_dropout),
                settings.dnn.model_copy(update={"seed": seed}),
                log_transform=kind in COUNT_SPACE_REDUCERS,
            )
        if settings.prior_correction:
            model.target_share = fold_data[fold][3]
        _, labels = predict(model, test.matrix)
        cm = confusion(test.labels, labels)
        logger.info(f"[EVAL] {kind}/{clf}/fold{fold}: accuracy {metrics(cm).accuracy:.4f}")
        return cm, model.trace

    cell_keys = [(kind, clf, fold) for kind in reducers for clf in classifiers for fold in range(plan.k)]
    scored = _run_tasks(
        [((k, c, f), lambda k=k, c=c, f=f: score_cell(k, c, f)) for k, c, f in cell_keys],
        settings.jobs,
    )

    sums: Dict[Tuple[str, str], ConfusionMatrix] = {}
    for (kind, clf, fold), (cm, trace) in zip(cell_keys, scored):
        report.folds.append(FoldResult(kind, clf, fold, cm, metrics(cm)))
        sums[(kind, clf)] = sums.get((kind, clf), ConfusionMatrix()) + cm
        if trace is not None:
            report.traces[(kind, clf, fold)] = trace
    for kind in reducers:
        for clf in classifiers:
            cm = sums[(kind, clf)]
            report.aggregates.append(CellResult(kind, clf, cm, metrics(cm)))

    report.fit_checks = check_leakage(fit_log, plan, dataset)
    logger.info(f"[EVAL] Leakage guard passed over {report.fit_checks} fit calls")
    for name, cell in report.best_cells().items():
        logger.info(f"[EVAL] Best {name}: {cell.reducer}/{cell.classifier} = {getattr(cell.metrics, name):.4f}")
    logger.info(f"[EVAL] Nearest-centroid baseline accuracy {report.baseline.accuracy:.4f}")
    return report
