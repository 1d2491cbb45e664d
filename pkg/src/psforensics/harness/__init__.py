"""Dataset generation, training/evaluation loops and reporting."""

from .dataset import (DataError, DatasetManifest, Record, build_composite, generate_dataset,
                      jpeg_dataset, load_split, printscan_dataset, relabel_by_source)
from .training import (EvalReport, NumericError, TrainResult, confusion_report, cross_eval,
                       evaluate, printer_id_experiment, train)
