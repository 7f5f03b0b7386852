"""
Client-side training: analytic gradients, mini-batch SGD with the FedProx
proximal term, and evaluation
"""
import logging
from typing import Dict, Tuple

import numpy as np

from core.exceptions import FederationError
from core.experiment import TaskKind
from core.services.seeding import Domain, stream, stream_seed
from core.types import LocalUpdate, ParameterVector, freeze
from partition.services.datasets import Dataset
from .tasks import Task, softmax_cross_entropy

logger = logging.getLogger(__name__)


class TrainingError(FederationError):
    """Exception for local training errors"""
    pass


def _one_hot(labels: np.ndarray, k: int) -> np.ndarray:
    out = np.zeros((labels.shape[0], k), dtype=np.float64)
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _forward(task: Task, params: ParameterVector, features: np.ndarray):
    blocks = task.unpack(params)
    if task.kind is TaskKind.LOGREG:
        return features @ blocks["W"] + blocks["b"], blocks, None
    hidden = np.tanh(features @ blocks["W1"] + blocks["b1"])
    return hidden @ blocks["W2"] + blocks["b2"], blocks, hidden


def loss_and_grad(
    task: Task, params: ParameterVector, features: np.ndarray, labels: np.ndarray
) -> Tuple[float, ParameterVector]:
    """
    Mean softmax cross-entropy over the batch and its exact gradient.
    """
    if labels.shape[0] == 0:
        raise TrainingError("Cannot compute a gradient on an empty batch")
    if features.shape[1] != task.d:
        raise TrainingError(f"Batch has {features.shape[1]} features, task expects {task.d}")

    logits, blocks, hidden = _forward(task, params, features)
    loss, probs = softmax_cross_entropy(logits, labels)
    delta = (probs - _one_hot(labels, task.k)) / labels.shape[0]

    if task.kind is TaskKind.LOGREG:
        grad = Task.pack(features.T @ delta, delta.sum(axis=0))
    else:
        grad_w2 = hidden.T @ delta
        grad_b2 = delta.sum(axis=0)
        back = (delta @ blocks["W2"].T) * (1.0 - hidden * hidden)
        grad_w1 = features.T @ back
        grad_b1 = back.sum(axis=0)
        grad = Task.pack(grad_w1, grad_b1, grad_w2, grad_b2)
    return loss, freeze(grad)


def local_train(
    task: Task,
    global_params: ParameterVector,
    data: Dataset,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    prox_mu: float,
    seed: int,
    client_id: int = 0,
    round_index: int = 0,
) -> LocalUpdate:
    """
    E epochs of mini-batch SGD from ``global_params`` on the client's data.

    Each epoch shuffles with its own stream derived from
    stream_seed(seed, client_id, round). The last short batch is kept. With
    prox_mu > 0 every step adds mu * (w - global_params).
    """
    if data.n == 0:
        raise TrainingError(f"Client {client_id} has no training data")
    if epochs < 0 or batch_size < 1:
        raise TrainingError("epochs must be >= 0 and batch_size >= 1")

    anchor = global_params
    weights = np.array(global_params, dtype=np.float64)
    base_seed = stream_seed(seed, client_id, round_index)
    batch_losses = []

    for epoch in range(epochs):
        order = stream(base_seed, Domain.SHUFFLE, epoch).permutation(data.n)
        batch_losses = []
        for start in range(0, data.n, batch_size):
            idx = np.sort(order[start:start + batch_size])
            loss, grad = loss_and_grad(task, weights, data.features[idx], data.labels[idx])
            if prox_mu > 0.0:
                grad = grad + prox_mu * (weights - anchor)
            weights = weights - learning_rate * grad
            batch_losses.append(loss)

    if batch_losses:
        train_loss = float(np.mean(batch_losses))
    else:
        train_loss, _ = loss_and_grad(task, anchor, data.features, data.labels)

    logger.debug("Client %s round %s trained, loss %.6f", client_id, round_index, train_loss)
    return LocalUpdate(
        client_id=client_id,
        round=round_index,
        sample_count=data.n,
        payload=freeze(weights),
        train_loss=train_loss,
    )


def evaluate(task: Task, params: ParameterVector, dataset: Dataset) -> Dict[str, float]:
    """
    Mean loss and accuracy; argmax ties go to the lowest class index.
    """
    if dataset.n == 0:
        raise TrainingError("Cannot evaluate on an empty dataset")
    logits, _, _ = _forward(task, params, dataset.features)
    loss, _ = softmax_cross_entropy(logits, dataset.labels)
    predictions = np.argmax(logits, axis=1)
    accuracy = float(np.mean(predictions == dataset.labels))
    return {"loss": loss, "accuracy": accuracy}
