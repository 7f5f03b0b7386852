"""
Built-in model family: multinomial logistic regression and a one-hidden-layer
tanh MLP, both stored as flat parameter vectors.

Layouts (row-major):
    logreg: [W (d x k), b (k)]
    mlp:    [W1 (d x h), b1 (h), W2 (h x k), b2 (k)]
"""
import math
from dataclasses import dataclass
from typing import Dict, Tuple

import numpy as np

from core.exceptions import DimensionMismatchError
from core.experiment import ExperimentConfig, TaskKind
from core.services.seeding import Domain, stream
from core.types import ParameterVector, as_parameter_vector


@dataclass(frozen=True)
class Task:
    kind: TaskKind
    d: int
    k: int
    h: int = 0

    @classmethod
    def from_config(cls, config: ExperimentConfig) -> "Task":
        task = config.task
        hidden = task.hidden_units if task.kind is TaskKind.MLP else 0
        return cls(kind=task.kind, d=task.feature_dim, k=task.n_classes, h=hidden)

    @property
    def dim(self) -> int:
        if self.kind is TaskKind.LOGREG:
            return self.d * self.k + self.k
        return self.d * self.h + self.h + self.h * self.k + self.k

    def unpack(self, params: ParameterVector) -> Dict[str, np.ndarray]:
        """Views of the parameter blocks, shaped as matrices."""
        if params.shape != (self.dim,):
            raise DimensionMismatchError(
                f"{self.kind.value} with d={self.d}, k={self.k}, h={self.h} needs "
                f"{self.dim} parameters, got {params.shape[0]}"
            )
        d, k, h = self.d, self.k, self.h
        if self.kind is TaskKind.LOGREG:
            return {
                "W": params[:d * k].reshape(d, k),
                "b": params[d * k:],
            }
        offsets = np.cumsum([0, d * h, h, h * k, k])
        return {
            "W1": params[offsets[0]:offsets[1]].reshape(d, h),
            "b1": params[offsets[1]:offsets[2]],
            "W2": params[offsets[2]:offsets[3]].reshape(h, k),
            "b2": params[offsets[3]:offsets[4]],
        }

    @staticmethod
    def pack(*blocks: np.ndarray) -> np.ndarray:
        return np.concatenate([np.asarray(b, dtype=np.float64).reshape(-1) for b in blocks])


def initial_params(task: Task, seed: int) -> ParameterVector:
    """
    Round-0 global model: zeros for logreg, seeded uniform(-1/sqrt(fan_in),
    1/sqrt(fan_in)) weights with zero biases for the MLP.
    """
    if task.kind is TaskKind.LOGREG:
        return as_parameter_vector(np.zeros(task.dim))
    rng = stream(seed, Domain.INIT)
    bound1 = 1.0 / math.sqrt(task.d)
    bound2 = 1.0 / math.sqrt(task.h)
    w1 = (2.0 * rng.uniform(task.d * task.h) - 1.0) * bound1
    w2 = (2.0 * rng.uniform(task.h * task.k) - 1.0) * bound2
    return as_parameter_vector(Task.pack(w1, np.zeros(task.h), w2, np.zeros(task.k)))


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> Tuple[float, np.ndarray]:
    """Mean cross-entropy and the softmax probabilities."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    exp = np.exp(shifted)
    totals = exp.sum(axis=1, keepdims=True)
    probs = exp / totals
    rows = np.arange(labels.shape[0])
    losses = np.log(totals[:, 0]) - shifted[rows, labels]
    return float(losses.mean()), probs
