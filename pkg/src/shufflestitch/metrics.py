"""Evaluation metrics and the relative-improvement summary.

The improvement percentage is oriented so that positive always means the
shuffled model did better: accuracy counts up, errors count down.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError


def accuracy(predicted, actual) -> float:
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise ContractError(
            f"prediction/label shape mismatch: {predicted.shape} vs {actual.shape}"
        )
    if predicted.size == 0:
        raise ContractError("accuracy of an empty batch is undefined")
    return float(np.mean(predicted == actual))


def _paired(predicted, actual, name):
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.shape != actual.shape:
        raise ContractError(
            f"{name}: shape mismatch {predicted.shape} vs {actual.shape}"
        )
    if predicted.size == 0:
        raise ContractError(f"{name} of an empty batch is undefined")
    return predicted, actual


def mse(predicted, actual) -> float:
    predicted, actual = _paired(predicted, actual, "mse")
    return float(np.mean((predicted - actual) ** 2))


def mae(predicted, actual) -> float:
    predicted, actual = _paired(predicted, actual, "mae")
    return float(np.mean(np.abs(predicted - actual)))


def diff_classification(baseline_accuracy: float, shuffled_accuracy: float) -> float:
    """Percent accuracy gain of the shuffled model over the baseline."""
    if baseline_accuracy == 0:
        raise ContractError("baseline accuracy is zero, relative gain undefined")
    return (shuffled_accuracy - baseline_accuracy) / baseline_accuracy * 100.0


def diff_forecasting(baseline_error: float, shuffled_error: float) -> float:
    """Percent error reduction of the shuffled model relative to the baseline."""
    if baseline_error == 0:
        raise ContractError("baseline error is zero, relative reduction undefined")
    return (baseline_error - shuffled_error) / baseline_error * 100.0


@dataclass
class ComparisonResult:
    task: str
    baseline_metric: float
    shuffled_metric: float
    diff_percent: float
    metric_name: str

    @classmethod
    def classification(cls, baseline_accuracy, shuffled_accuracy):
        return cls(
            task="classification",
            baseline_metric=baseline_accuracy,
            shuffled_metric=shuffled_accuracy,
            diff_percent=diff_classification(baseline_accuracy, shuffled_accuracy),
            metric_name="accuracy",
        )

    @classmethod
    def forecasting(cls, baseline_error, shuffled_error, metric_name="mse"):
        return cls(
            task="forecasting",
            baseline_metric=baseline_error,
            shuffled_metric=shuffled_error,
            diff_percent=diff_forecasting(baseline_error, shuffled_error),
            metric_name=metric_name,
        )

    def to_dict(self) -> dict:
        return {
            "task": self.task,
            "metric": self.metric_name,
            "baseline": self.baseline_metric,
            "shuffled": self.shuffled_metric,
            "diff_percent": self.diff_percent,
        }
