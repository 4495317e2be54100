from .dataset import InconsistentChannels, LabeledDataset, TooFewSamples, split_dataset
from .metrics import (
    ConfusionMatrix,
    Evaluation,
    evaluate,
    fusion_gain_report,
    metrics_from_matrix,
    write_confusion_csv,
    write_metrics,
)
from .model import (
    ChannelMismatch,
    NearestCentroid,
    ReferenceMlp,
    TrainConfig,
    classify,
    numerical_gradient,
    predict,
    softmax,
    train_classifier,
)
from .modelio import load_model, read_header, save_model
from .service import CloudService, ReplayClock, replay_latency

__all__ = [
    "InconsistentChannels", "LabeledDataset", "TooFewSamples", "split_dataset",
    "ConfusionMatrix", "Evaluation", "evaluate", "fusion_gain_report", "metrics_from_matrix",
    "write_confusion_csv", "write_metrics", "ChannelMismatch", "NearestCentroid",
    "ReferenceMlp", "TrainConfig", "classify", "numerical_gradient", "predict", "softmax",
    "train_classifier", "load_model", "read_header", "save_model", "CloudService",
    "ReplayClock", "replay_latency",
]
