"""
Client-side privacy pipeline: clip -> noise -> encode -> mask
"""
import logging
from dataclasses import replace
from typing import Iterable, Optional

from core.experiment import ExperimentConfig
from core.services.seeding import Domain, domain_seed, stream_seed
from core.services.vectors import vec_sub
from core.types import LocalUpdate, ParameterVector, as_parameter_vector
from .dp import add_noise, clip, gaussian_sigma
from .secagg import MaskSeedTable, mask_payload

logger = logging.getLogger(__name__)


def noise_seed(seed: int, client_id: int, round_index: int) -> int:
    return domain_seed(stream_seed(seed, client_id, round_index), Domain.NOISE)


def privatize_update(
    config: ExperimentConfig,
    update: LocalUpdate,
    global_params: ParameterVector,
    participants: Iterable[int],
    table: Optional[MaskSeedTable] = None,
) -> LocalUpdate:
    """
    Apply the enabled privacy stages to a plain update. The DP stage works on
    the delta w_k - w_global; the secagg stage replaces the payload with the
    masked residues of n_k * w_k.
    """
    if update.masked:
        return update
    params = update.payload

    if config.dp.enabled:
        sigma = gaussian_sigma(config.dp.clip, config.dp.epsilon, config.dp.delta)
        delta = clip(vec_sub(params, global_params), config.dp.clip)
        delta = add_noise(delta, sigma, noise_seed(config.seed, update.client_id, update.round))
        params = as_parameter_vector(global_params + delta)
        logger.debug("client %s round %s: dp sigma=%.6g", update.client_id, update.round, sigma)

    if not config.secagg.enabled:
        if params is update.payload:
            return update
        return replace(update, payload=params)

    table = table or MaskSeedTable(config.comm.auth_token)
    masked = mask_payload(
        params,
        update.sample_count,
        update.client_id,
        participants,
        update.round,
        table,
        config.secagg.fixed_point_scale,
    )
    return replace(update, payload=masked, masked=True)

