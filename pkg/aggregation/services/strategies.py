"""
Weighted FedAvg and staleness-discounted asynchronous application
"""
from typing import Sequence

from core.exceptions import FederationError
from core.types import LocalUpdate, ParameterVector, require_same_dim
from core.services.vectors import vec_axpy, vec_scale


class AggregationError(FederationError):
    """Exception for aggregation errors"""
    pass


class FutureUpdateError(AggregationError):
    """Exception for updates claiming a round the server has not reached"""
    pass


def fedavg(updates: Sequence[LocalUpdate]) -> ParameterVector:
    """
    Sample-weighted mean of plain client models, summed in ascending
    client_id order so the result does not depend on arrival order.
    """
    if not updates:
        raise AggregationError("Cannot aggregate an empty list of updates")
    if any(update.masked for update in updates):
        raise AggregationError("fedavg needs plain updates; masked ones go to secagg_aggregate")
    rounds = {update.round for update in updates}
    if len(rounds) != 1:
        raise AggregationError(f"Updates span several rounds: {sorted(rounds)}")

    ordered = sorted(updates, key=lambda update: update.client_id)
    total = sum(update.sample_count for update in ordered)
    first = ordered[0]
    result = vec_scale(first.sample_count / total, first.payload)
    for update in ordered[1:]:
        require_same_dim(update.payload, result)
        result = vec_axpy(update.sample_count / total, update.payload, result)
    return result


def staleness_weight(server_round: int, update_round: int, alpha: float, exponent: float) -> float:
    """alpha * (1 + t - tau) ** -a"""
    if server_round < update_round:
        raise FutureUpdateError(
            f"Update from round {update_round} arrived at server round {server_round}"
        )
    return alpha * (1.0 + server_round - update_round) ** (-exponent)


def async_apply(
    global_params: ParameterVector,
    update_params: ParameterVector,
    server_round: int,
    update_round: int,
    alpha: float,
    exponent: float,
) -> ParameterVector:
    """
    w <- (1 - alpha*s) * w + alpha*s * w_update with s = (1 + t - tau)^(-a)
    """
    require_same_dim(global_params, update_params)
    weight = staleness_weight(server_round, update_round, alpha, exponent)
    return vec_axpy(weight, update_params, vec_scale(1.0 - weight, global_params))
