"""Deterministic federated learning simulator for label-flipping attacks and their detection.

Modules:
    data        labeled datasets, synthetic Gaussian tasks, IID sharding, label flipping, CSV I/O
    model       dense ReLU/softmax classifier on a flat parameter vector, backprop and SGD
    federation  participant selection, FedAvg rounds and the attack window
    metrics     confusion matrices, recalls and attack-impact summaries
    defense     fingerprint extraction, PCA projection and 2-means flagging of uploads
    harness     INI configs, presets, run directories and report tables
"""
from .data import LabeledDataset, Partition, SyntheticSpec, generate_synthetic, load_csv
from .defense import DefenseReport, evaluate_updates, flag_malicious, pca2, standardize
from .federation import ConfigError, FederationConfig, RunResult, aggregate, run_training
from .metrics import ConfusionMatrix, MetricsSeries, accuracy, class_recall, recall_loss
from .model import Architecture, ParameterVector, gradient, init_params, sgd_epoch

__version__ = "0.1.0"

__all__ = [
    "Architecture", "ConfigError", "ConfusionMatrix", "DefenseReport", "FederationConfig",
    "LabeledDataset", "MetricsSeries", "ParameterVector", "Partition", "RunResult", "SyntheticSpec",
    "accuracy", "aggregate", "class_recall", "evaluate_updates", "flag_malicious",
    "generate_synthetic", "gradient", "init_params", "load_csv", "pca2", "recall_loss",
    "run_training", "sgd_epoch", "standardize",
]
