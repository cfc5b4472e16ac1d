"""
Feature reduction strategies: none, variance threshold, and the 1- and
3-layer autoencoders (bottleneck of 32 ELU units), behind one fit/apply
contract. Reducers never see labels.
"""

import logging
from dataclasses import dataclass
from typing import List, Literal, Optional

import numpy as np
from pydantic import BaseModel, Field

import config
from utilities import artifacts
from utilities.errors import EmptyFeatureSet, ShapeMismatch
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

logger = logging.getLogger(__name__)

ReducerKind = Literal["none", "variance_threshold", "ae_1l", "ae_3l"]
AUTOENCODER_KINDS = ("ae_1l", "ae_3l")


class ReducerSpec(BaseModel):
    kind: ReducerKind = "none"
    threshold: float = Field(default=config.VT_THRESHOLD, ge=0.0)
    train: TrainConfig = Field(default_factory=TrainConfig)


@dataclass
class ReducerModel:
    kind: str
    input_width: int
    retained: Optional[np.ndarray] = None
    encoder: Optional[Network] = None
    scaler: Optional[InputScaler] = None
    trace: Optional[TrainingTrace] = None

    @property
    def output_width(self) -> int:
        if self.kind == "variance_threshold":
            return len(self.retained)
        if self.encoder is not None:
            return self.encoder.spec.layer_widths[-1]
        return self.input_width

    def output_names(self, input_names) -> List[str]:
        if self.kind == "none":
            return list(input_names)
        if self.kind == "variance_threshold":
            return [input_names[j] for j in self.retained]
        return [f"{self.kind}_{j:02d}" for j in range(self.output_width)]


def autoencoder_spec(kind: str, input_width: int) -> NetworkSpec:
    """Input-32-Output (ae_1l) or Input-128-64-32-64-128-Output (ae_3l)."""
    hidden = list(config.AE_HIDDEN[kind])
    return NetworkSpec(
        layer_widths=[input_width, *hidden, input_width],
        activations=["elu"] * len(hidden) + ["linear"],
        dropout_rate=0.0,
        loss="mse",
    )


def variances(matrix: np.ndarray) -> np.ndarray:
    """Population variance (divide by N) per column."""
    return np.var(matrix, axis=0)


def fit(spec: ReducerSpec, train_matrix: np.ndarray) -> ReducerModel:
    """
    Fit a reducer on training rows only.

    Args:
        spec: Reducer kind and parameters
        train_matrix: Raw count features (rows x columns)

    Returns:
        Fitted ReducerModel

    Raises:
        EmptyFeatureSet: variance threshold removed every column
        ShapeMismatch: empty training matrix
    """
    train_matrix = np.asarray(train_matrix, dtype=np.float64)
    if train_matrix.ndim != 2 or train_matrix.shape[0] == 0 or train_matrix.shape[1] == 0:
        raise ShapeMismatch(f"cannot fit a reducer on shape {train_matrix.shape}")
    width = train_matrix.shape[1]

    if spec.kind == "none":
        return ReducerModel("none", width)

    if spec.kind == "variance_threshold":
        retained = np.flatnonzero(variances(train_matrix) >= spec.threshold)
        if len(retained) == 0:
            raise EmptyFeatureSet(f"no column has variance >= {spec.threshold}")
        logger.info(f"[REDUCE] VT kept {len(retained)}/{width} columns (threshold {spec.threshold})")
        return ReducerModel("variance_threshold", width, retained=retained)

    scaler = InputScaler.fit(train_matrix, log_transform=True)
    scaled = scaler.transform(train_matrix)
    ae_spec = autoencoder_spec(spec.kind, width)
    network, trace = train(ae_spec, scaled, scaled, spec.train)
    encoder = network.truncated(len(config.AE_HIDDEN[spec.kind]) // 2 + 1)
    logger.info(f"[REDUCE] {spec.kind} encoder {encoder.spec.layer_widths}")
    return ReducerModel(spec.kind, width, encoder=encoder, scaler=scaler, trace=trace)


def apply(model: ReducerModel, matrix: np.ndarray) -> np.ndarray:
    """
    Reduce a matrix with a fitted model.

    Raises:
        ShapeMismatch: matrix width differs from the fitted input width
    """
    matrix = np.asarray(matrix, dtype=np.float64)
    if matrix.ndim != 2 or matrix.shape[1] != model.input_width:
        raise ShapeMismatch(f"matrix shape {matrix.shape} vs fitted width {model.input_width}")
    if model.kind == "none":
        return matrix
    if model.kind == "variance_threshold":
        return matrix[:, model.retained]
    encoded, _ = forward(model.encoder, model.scaler.transform(matrix), "infer")
    return encoded


def apply_dataset(model: ReducerModel, dataset: LabeledDataset) -> LabeledDataset:
    return dataset.with_features(apply(model, dataset.matrix), model.output_names(dataset.column_names))


# ============================================================================
# Persistence
# ============================================================================

def reducer_payload(model: ReducerModel, prefix: str = ""):
    """
    Header and named arrays describing a fitted reducer.

    Args:
        model: The fitted reducer
        prefix: Array name prefix, so a reducer can ride inside a classifier file

    Returns:
        Tuple of (header dict, arrays dict)
    """
    header = {"kind": model.kind, "input_width": model.input_width}
    arrays = {}
    if model.retained is not None:
        arrays[f"{prefix}retained"] = model.retained.astype(np.float64)
    if model.encoder is not None:
        header["encoder_spec"] = model.encoder.spec.model_dump()
        header["log_transform"] = model.scaler.log_transform
        arrays[f"{prefix}mins"] = model.scaler.mins
        arrays[f"{prefix}spans"] = model.scaler.spans
        arrays.update(network_arrays(model.encoder, prefix))
    return header, arrays


def reducer_from_payload(header: dict, arrays: dict, prefix: str = "") -> ReducerModel:
    model = ReducerModel(header["kind"], int(header["input_width"]))
    if f"{prefix}retained" in arrays:
        model.retained = arrays[f"{prefix}retained"].astype(np.int64)
    if "encoder_spec" in header:
        model.encoder = network_from_arrays(NetworkSpec(**header["encoder_spec"]), arrays, prefix)
        model.scaler = InputScaler(arrays[f"{prefix}mins"], arrays[f"{prefix}spans"], bool(header["log_transform"]))
    return model


def save_reducer(model: ReducerModel, path: str) -> None:
    header, arrays = reducer_payload(model)
    artifacts.write(path, artifacts.REDUCER_MAGIC, header, arrays)


def load_reducer(path: str) -> ReducerModel:
    header, arrays = artifacts.read(path, artifacts.REDUCER_MAGIC)
    return reducer_from_payload(header, arrays)
