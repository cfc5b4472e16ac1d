"""
Centralized configuration for the opcode malware classifier.
All settings in one place - modify here instead of scattered across files.
"""
import os
from dotenv import load_dotenv

# Load environment variables from .env file (if it exists)
load_dotenv()

# Runtime Configuration
MASTER_SEED = int(os.getenv("OPCLASS_SEED", "7"))
JOBS = int(os.getenv("OPCLASS_JOBS", "1"))
LOG_LEVEL = os.getenv("OPCLASS_LOG_LEVEL", "INFO")
LOG_FORMAT = "%(asctime)s %(levelname)s %(message)s"

# Streamlit report viewer reads from here
REPORT_DIR = os.getenv("OPCLASS_REPORT_DIR", "report")

# Synthetic corpus
SYNTH_ROW_TOTAL = 500  # opcode tokens per synthetic file

# ADASYN defaults
ADASYN_K = 5
ADASYN_BETA = 1.0

# Feature reduction
VT_THRESHOLD = 0.1
BOTTLENECK_WIDTH = 32
AE_HIDDEN = {
    "ae_1l": (32,),
    "ae_3l": (128, 64, 32, 64, 128),
}

# Neural training
BATCH_SIZE = 64
EPOCHS = 120
ADAM_ALPHA = 0.001
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPSILON = 1e-8
VALIDATION_FRACTION = 0.1
ELU_ALPHA = 1.0
BCE_CLAMP = 1e-7

# DNN classifiers
DNN_HIDDEN = {
    "dnn_2l": (1024, 32),
    "dnn_4l": (1024, 256, 64, 16),
    "dnn_7l": (1024, 512, 256, 128, 64, 32, 16),
}
DNN_DROPOUT = 0.1

# Random forest
RF_TREES = 100
RF_MIN_SAMPLES_SPLIT = 2

# Evaluation
FOLDS = 3
DECISION_THRESHOLD = 0.5

# Grid names as they appear in reports
REDUCER_LABELS = {
    "none": "None",
    "variance_threshold": "VT",
    "ae_1l": "AE-1L",
    "ae_3l": "AE-3L",
}
CLASSIFIER_LABELS = {
    "rf": "RF",
    "dnn_2l": "DNN-2L",
    "dnn_4l": "DNN-4L",
    "dnn_7l": "DNN-7L",
}

# Published reference results (accuracy, tpr, tnr, ppv in percent).
# The corpus is no longer distributed, so these are annotations only.
PUBLISHED_RESULTS = {
    ("none", "rf"): (99.74, 99.48, 100.0, 100.0),
    ("variance_threshold", "rf"): (99.78, 99.59, 99.97, 99.97),
    ("ae_1l", "rf"): (99.41, 98.86, 99.97, 99.97),
    ("ae_3l", "rf"): (99.36, 98.72, 100.0, 100.0),
    ("none", "dnn_2l"): (97.79, 96.33, 99.26, 99.24),
    ("variance_threshold", "dnn_2l"): (98.84, 98.32, 99.37, 99.37),
    ("ae_1l", "dnn_2l"): (96.95, 94.57, 99.37, 99.34),
    ("ae_3l", "dnn_2l"): (96.25, 93.75, 98.79, 98.74),
    ("none", "dnn_4l"): (97.42, 95.38, 99.48, 99.46),
    ("variance_threshold", "dnn_4l"): (98.69, 97.96, 99.42, 99.42),
    ("ae_1l", "dnn_4l"): (98.99, 98.29, 99.70, 99.70),
    ("ae_3l", "dnn_4l"): (97.16, 98.61, 95.68, 95.85),
    ("none", "dnn_7l"): (96.15, 99.05, 93.20, 93.66),
    ("variance_threshold", "dnn_7l"): (96.20, 98.89, 93.48, 93.89),
    ("ae_1l", "dnn_7l"): (98.99, 98.61, 99.81, 99.81),
    ("ae_3l", "dnn_7l"): (93.60, 87.97, 99.31, 99.23),
}
