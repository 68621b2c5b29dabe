"""Dynamic sequential graph learning for click-through-rate prediction."""

from .data import (EventLog, InteractionEvent, SynthConfig, load_events,
                   negative_sample, synth_generate, temporal_split, write_events)
from .estimator import DSGLClassifier, PopularityClassifier
from .graphs import (BehaviorIndex, DsgBatch, DsgNode, DsgSpec, batch_dsgs,
                     build_dsg, build_index)
from .metrics import UndefinedMetricError, auc, logloss
from .model import (ModelConfig, ModelParams, forward_scores, layer_combine,
                    load_checkpoint, prediction_loss, save_checkpoint, time_bucket)
from .tensor import Adam, Tape, Tensor, set_default_dtype, using_dtype, xavier_uniform_init
from .training import (PopularityModel, RunReport, TrainConfig,
                       TrainingDivergedError, evaluate, predict_scores, train)

__version__ = "0.1.0"

__all__ = [
    "Adam", "BehaviorIndex", "DSGLClassifier", "DsgBatch", "DsgNode", "DsgSpec",
    "EventLog", "InteractionEvent", "ModelConfig", "ModelParams",
    "PopularityClassifier", "PopularityModel", "RunReport", "SynthConfig",
    "Tape", "Tensor", "TrainConfig", "TrainingDivergedError",
    "UndefinedMetricError", "auc", "batch_dsgs", "build_dsg", "build_index",
    "evaluate", "forward_scores", "layer_combine", "load_checkpoint",
    "load_events", "logloss", "negative_sample", "prediction_loss",
    "predict_scores", "save_checkpoint", "set_default_dtype", "synth_generate",
    "temporal_split", "time_bucket", "train", "using_dtype", "write_events",
    "xavier_uniform_init",
]
