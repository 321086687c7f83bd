"""Multi-task LSTM for drone state identification and trajectory prediction."""

from .labeler import DroneState, LabelThresholds, annotate, annotate_states
from .model import ArchConfig, LossWeights, build_model
from .optim import TrainConfig, load_checkpoint, save_checkpoint, train
from .pipeline import SplitSpec, fit_scaler, slide_windows, split_dataset
from .synth import SynthConfig, generate_synthetic_flight
from .telemetry import FlightSeries, parse_flight_csv, write_flight_csv

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "DroneState", "FlightSeries", "LabelThresholds", "LossWeights", "SplitSpec",
    "SynthConfig", "TrainConfig", "annotate", "annotate_states", "build_model", "fit_scaler",
    "generate_synthetic_flight", "load_checkpoint", "parse_flight_csv", "save_checkpoint",
    "slide_windows", "split_dataset", "train", "write_flight_csv",
]
