"""FTP Model 1 traffic: Poisson file arrivals and user-perceived throughput."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

FILE_SIZE_BITS = 4_000_000  # 0.5 MB, decimal megabytes
TTI_S = 1e-3


@dataclass
class FileTransfer:
    ue_id: int
    arrival_tti: int
    size_bits: int = FILE_SIZE_BITS
    remaining_bits: Optional[int] = None
    completion_tti: Optional[int] = None

    def __post_init__(self):
        if self.remaining_bits is None:
            self.remaining_bits = self.size_bits

    @property
    def completed(self) -> bool:
        return self.completion_tti is not None

    @property
    def delivered_bits(self) -> int:
        return self.size_bits - self.remaining_bits


def generate_arrivals(lambda_per_s: float, tti_duration_s: float, rng: np.random.Generator,
                      n_ttis: Optional[int] = None):
    """Number of new file transfers in a TTI (or in each of `n_ttis` TTIs)."""
    if lambda_per_s < 0:
        raise ValueError("arrival rate must be non-negative")
    mean = lambda_per_s * tti_duration_s
    if n_ttis is None:
        return int(rng.poisson(mean))
    return rng.poisson(mean, size=n_ttis)


def record_delivery(transfer: FileTransfer, bits: float, tti: int) -> FileTransfer:
    """Deduct delivered bits; anything beyond the remaining amount is dropped."""
    if transfer.completed:
        raise ValueError(f"transfer of UE {transfer.ue_id} already completed")
    if bits < 0:
        raise ValueError("delivered bits must be non-negative")
    transfer.remaining_bits = max(transfer.remaining_bits - bits, 0)
    if transfer.remaining_bits <= 0:
        transfer.completion_tti = tti
    return transfer


def upt(transfer: FileTransfer, tti_duration_s: float = TTI_S) -> float:
    """User-perceived throughput in bits/s; the arrival TTI counts as one TTI."""
    if not transfer.completed:
        raise ValueError(f"transfer of UE {transfer.ue_id} is not complete")
    n_ttis = transfer.completion_tti - transfer.arrival_tti + 1
    return transfer.size_bits / (n_ttis * tti_duration_s)
