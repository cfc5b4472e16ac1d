"""
Experiment configuration files for `opclass run`.

Format is TOML: top-level `key = value` lines plus `[section]` groups.
Parsing uses tomllib, validation uses the pydantic models below. Every
failure becomes a ConfigError pointing at the offending line.

Example:
    seed = 7

    [paths]
    output_dir = "report"

    [synth]
    minority = 200
    majority = 800
    opcodes = 50
    separation = 0.9

    [grid]
    reducers = "all"
    classifiers = "all"
"""

import os
import re
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - Python 3.10 backport
    import tomli as tomllib
from typing import List, Literal, Optional, Tuple, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import config
from utilities.errors import ConfigError
from utilities.evaluate import REDUCER_KINDS, ExperimentSettings
from utilities.balance import AdasynConfig
from utilities.models import CLASSIFIER_KINDS, RandomForestConfig
from utilities.neural import AdamHyper, TrainConfig
from utilities.seeds import config_hash

TOML_LINE_RE = re.compile(r"at line (\d+)")
SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]\s*(#.*)?$")


class Section(BaseModel):
    model_config = ConfigDict(extra="forbid")


class PathsSection(Section):
    asm_dir: Optional[str] = None
    labels: Optional[str] = None
    dataset: Optional[str] = None
    output_dir: str = config.REPORT_DIR


class SynthSection(Section):
    minority: int = Field(default=200, ge=1)
    majority: int = Field(default=800, ge=1)
    opcodes: int = Field(default=50, ge=2)
    separation: float = Field(default=0.9, ge=0.0, le=1.0)
    row_total: int = Field(default=config.SYNTH_ROW_TOTAL, ge=1)


class GridSection(Section):
    reducers: List[Literal["none", "variance_threshold", "ae_1l", "ae_3l"]] = Field(
        default_factory=lambda: list(REDUCER_KINDS)
    )
    classifiers: List[Literal["rf", "dnn_2l", "dnn_4l", "dnn_7l"]] = Field(
        default_factory=lambda: list(CLASSIFIER_KINDS)
    )

    @field_validator("reducers", mode="before")
    @classmethod
    def _all_reducers(cls, value):
        return list(REDUCER_KINDS) if value == "all" else value

    @field_validator("classifiers", mode="before")
    @classmethod
    def _all_classifiers(cls, value):
        return list(CLASSIFIER_KINDS) if value == "all" else value

    @field_validator("reducers", "classifiers")
    @classmethod
    def _no_repeats(cls, value):
        repeated = [name for name in dict.fromkeys(value) if value.count(name) > 1]
        if repeated:
            raise ValueError(f"listed more than once: {repeated}")
        return value


class AdasynSection(Section):
    k: int = Field(default=config.ADASYN_K, ge=1)
    beta: float = Field(default=config.ADASYN_BETA, ge=0.0, le=1.0)


class ReducerSection(Section):
    vt_threshold: float = Field(default=config.VT_THRESHOLD, ge=0.0)


class AdamSection(AdamHyper):
    model_config = ConfigDict(extra="forbid")


class TrainSection(Section):
    batch_size: int = Field(default=config.BATCH_SIZE, ge=1)
    epochs: int = Field(default=config.EPOCHS, ge=1)
    validation_fraction: Optional[float] = Field(default=None, ge=0.0, lt=1.0)
    adam: AdamSection = Field(default_factory=AdamSection)

    def to_train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            epochs=self.epochs,
            validation_fraction=self.validation_fraction,
            adam=AdamHyper(**self.adam.model_dump()),
        )


class DnnSection(TrainSection):
    dropout: float = Field(default=config.DNN_DROPOUT, ge=0.0, lt=1.0)


class ForestSection(Section):
    n_trees: int = Field(default=config.RF_TREES, ge=1)
    max_depth: Optional[int] = Field(default=None, ge=1)
    min_samples_split: int = Field(default=config.RF_MIN_SAMPLES_SPLIT, ge=2)
    features_per_split: Optional[int] = Field(default=None, ge=1)


class EvaluateSection(Section):
    folds: int = Field(default=config.FOLDS, ge=2)
    stratified: bool = False
    prior_correction: bool = True


class ExperimentConfig(Section):
    seed: int = config.MASTER_SEED
    jobs: int = Field(default=config.JOBS, ge=1)
    paths: PathsSection = Field(default_factory=PathsSection)
    synth: Optional[SynthSection] = None
    grid: GridSection = Field(default_factory=GridSection)
    adasyn: AdasynSection = Field(default_factory=AdasynSection)
    reducer: ReducerSection = Field(default_factory=ReducerSection)
    autoencoder: TrainSection = Field(default_factory=TrainSection)
    dnn: DnnSection = Field(default_factory=DnnSection)
    forest: ForestSection = Field(default_factory=ForestSection)
    evaluate: EvaluateSection = Field(default_factory=EvaluateSection)

    @model_validator(mode="after")
    def _one_source(self):
        sources = [s for s in (self.paths.asm_dir, self.paths.dataset) if s] + ([self.synth] if self.synth else [])
        if len(sources) != 1:
            raise ValueError("exactly one data source needed: paths.asm_dir, paths.dataset or [synth]")
        return self

    def settings(self, seed: Optional[int] = None, jobs: Optional[int] = None) -> ExperimentSettings:
        """Component configs for run_experiment (seed/jobs overrides from the CLI)."""
        return ExperimentSettings(
            seed=self.seed if seed is None else seed,
            folds=self.evaluate.folds,
            stratified=self.evaluate.stratified,
            jobs=self.jobs if jobs is None else jobs,
            adasyn=AdasynConfig(k=self.adasyn.k, beta=self.adasyn.beta),
            vt_threshold=self.reducer.vt_threshold,
            autoencoder=self.autoencoder.to_train_config(),
            dnn=self.dnn.to_train_config(),
            dnn_dropout=self.dnn.dropout,
            forest=RandomForestConfig(**self.forest.model_dump()),
            prior_correction=self.evaluate.prior_correction,
        )

    def hash(self) -> str:
        return config_hash(self.model_dump(exclude={"paths": {"output_dir"}}))


# ============================================================================
# Line lookup
# ============================================================================

def find_key_line(text: str, loc: Tuple[Union[str, int], ...]) -> Optional[int]:
    """
    1-based line of the key at a pydantic error location.

    Args:
        text: Config file text
        loc: Error location, e.g. ("paths", "asm_dir") or ("autoencoder", "adam", "alpha")

    Returns:
        Line number, the section header's line if the key is absent, or None
    """
    parts = [str(p) for p in loc if not isinstance(p, int)]
    if not parts:
        return None
    for depth in range(len(parts) - 1, -1, -1):
        section, key = ".".join(parts[:depth]), parts[depth]
        current = ""
        header_line = None
        for line_no, line in enumerate(text.splitlines(), start=1):
            match = SECTION_RE.match(line)
            if match:
                current = match.group(1).strip()
                if current == ".".join(parts[: depth + 1]):
                    header_line = line_no
                continue
            if current == section and re.match(rf"^\s*{re.escape(key)}\s*=", line):
                return line_no
        if header_line is not None:
            return header_line
    return None


def _resolve(path: Optional[str], base_dir: str) -> Optional[str]:
    if not path:
        return path
    return path if os.path.isabs(path) else os.path.normpath(os.path.join(base_dir, path))


def parse_config(text: str, base_dir: str = ".") -> ExperimentConfig:
    """
    Parse and validate config text.

    Args:
        text: TOML text
        base_dir: Directory relative paths are resolved against

    Returns:
        Validated ExperimentConfig with absolute/normalized paths

    Raises:
        ConfigError: syntax error, invalid value, or missing input path
    """
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as e:
        match = TOML_LINE_RE.search(str(e))
        raise ConfigError(str(e), int(match.group(1)) if match else None) from e

    try:
        cfg = ExperimentConfig.model_validate(raw)
    except ValidationError as e:
        first = e.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "config"
        raise ConfigError(f"{where}: {first['msg']}", find_key_line(text, first["loc"])) from e

    paths = cfg.paths
    for key in ("asm_dir", "labels", "dataset"):
        value = _resolve(getattr(paths, key), base_dir)
        setattr(paths, key, value)
        if not value:
            continue
        exists = os.path.isdir(value) if key == "asm_dir" else os.path.isfile(value)
        if not exists:
            raise ConfigError(f"paths.{key}: {value} does not exist", find_key_line(text, ("paths", key)))
    paths.output_dir = _resolve(paths.output_dir, base_dir)
    return cfg


def load_config(path: str) -> ExperimentConfig:
    """Read and validate a config file; relative paths resolve against its directory."""
    try:
        with open(path, "r", encoding="utf-8") as f:
            text = f.read()
    except IOError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return parse_config(text, os.path.dirname(os.path.abspath(path)))
