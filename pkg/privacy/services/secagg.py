"""
Pairwise-mask secure aggregation over fixed-point residues.

Every payload is a uint64 vector modulo 2^64. A client encodes n_k * w_k in
fixed point, appends its sample count n_k as one extra residue and adds its
pairwise mask to the whole vector. The masks of all participants cancel in
the wrapped sum, so the server only ever learns the totals.
"""
import hashlib
from dataclasses import dataclass, field
from typing import Dict, Iterable, Sequence, Tuple

import numpy as np

from core.services.seeding import MASK64, SplitMix64
from core.types import LocalUpdate, ParameterVector, ResidueVector, freeze
from .dp import PrivacyError


class SecAggDropoutError(PrivacyError):
    """Exception for a masked round missing a participant"""
    pass


def fp_encode(values: ParameterVector, scale: int) -> ResidueVector:
    """
    round-half-to-even(x * s) embedded two's complement in uint64.
    Callers keep |sum of encoded values| below 2^63.
    """
    if scale <= 0:
        raise PrivacyError(f"Fixed-point scale must be positive, got {scale}")
    scaled = np.rint(np.asarray(values, dtype=np.float64) * np.float64(scale))
    return freeze(scaled.astype(np.int64).view(np.uint64))


def fp_decode(residues: ResidueVector, scale: int, divisor: float = 1) -> ParameterVector:
    """Read residues as signed integers and divide by s * divisor."""
    if scale <= 0 or divisor <= 0:
        raise PrivacyError("Fixed-point scale and divisor must be positive")
    signed = np.asarray(residues, dtype=np.uint64).view(np.int64).astype(np.float64)
    return freeze(signed / (np.float64(scale) * np.float64(divisor)))


def mask_seed(auth_token: str, i: int, j: int) -> int:
    """
    SHA-256(token || min(i,j) || max(i,j)) truncated to 64 bits; ids are
    u32 little-endian.
    """
    low, high = min(i, j), max(i, j)
    material = auth_token.encode("utf-8") + low.to_bytes(4, "little") + high.to_bytes(4, "little")
    return int.from_bytes(hashlib.sha256(material).digest()[:8], "little")


@dataclass
class MaskSeedTable:
    """Symmetric pair seeds derived from the shared token, computed lazily."""
    auth_token: str
    _cache: Dict[Tuple[int, int], int] = field(default_factory=dict, repr=False)

    def seed(self, i: int, j: int) -> int:
        key = (min(i, j), max(i, j))
        if key not in self._cache:
            self._cache[key] = mask_seed(self.auth_token, *key)
        return self._cache[key]


def pair_stream(pair_seed: int, round_index: int, dim: int) -> ResidueVector:
    return SplitMix64((pair_seed ^ round_index) & MASK64).u64_array(dim)


def pairwise_mask(
    client_id: int,
    participants: Iterable[int],
    round_index: int,
    table: MaskSeedTable,
    dim: int,
) -> ResidueVector:
    """
    sum over j > i of PRG(seed_ij) minus sum over j < i, modulo 2^64.
    """
    ids = sorted(set(participants))
    if client_id not in ids:
        raise PrivacyError(f"Client {client_id} is not among the round participants")
    mask = np.zeros(dim, dtype=np.uint64)
    for other in ids:
        if other == client_id:
            continue
        draw = pair_stream(table.seed(client_id, other), round_index, dim)
        if other > client_id:
            mask += draw
        else:
            mask -= draw
    return freeze(mask)


def mask_payload(
    params: ParameterVector,
    sample_count: int,
    client_id: int,
    participants: Iterable[int],
    round_index: int,
    table: MaskSeedTable,
    scale: int,
) -> ResidueVector:
    """fp_encode(n_k * w_k) followed by the n_k residue, plus the pairwise mask."""
    weighted = np.float64(sample_count) * np.asarray(params, dtype=np.float64)
    encoded = np.concatenate([fp_encode(weighted, scale), np.array([sample_count], dtype=np.uint64)])
    mask = pairwise_mask(client_id, participants, round_index, table, encoded.shape[0])
    return freeze(encoded + mask)


def secagg_aggregate(updates: Sequence[LocalUpdate], expected: Iterable[int], scale: int) -> ParameterVector:
    """
    Wrapped sum of every expected client's masked payload, decoded as
    sum(n_k w_k) / sum(n_k).
    """
    expected_ids = sorted(set(expected))
    if any(not update.masked for update in updates):
        raise PrivacyError("secagg_aggregate accepts masked residue payloads only")
    received = {update.client_id for update in updates}
    missing = [cid for cid in expected_ids if cid not in received]
    if missing:
        raise SecAggDropoutError(f"secagg dropout: no masked update from clients {missing}")
    unexpected = sorted(received - set(expected_ids))
    if unexpected:
        raise PrivacyError(f"Masked updates from clients outside the round: {unexpected}")

    ordered = sorted(updates, key=lambda update: update.client_id)
    width = ordered[0].payload.shape[0]
    total = np.zeros(width, dtype=np.uint64)
    for update in ordered:
        if update.payload.shape[0] != width:
            raise PrivacyError("Masked payloads differ in length")
        total += update.payload
    sample_total = int(total[-1])
    if sample_total < 1:
        raise PrivacyError("Unmasked sample total is not positive")
    return fp_decode(total[:-1], scale, sample_total)
