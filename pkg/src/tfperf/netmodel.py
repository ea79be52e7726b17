"""Collective times on a two-tier (NVS + IB) network.

Groups are described by their size ``n`` and how many of their members sit
in the same NVS domain (``g``). Rings that cross domains are limited by the
slower of the per-GPU NVS link and the NICs the group can use.
"""
from __future__ import annotations

from dataclasses import dataclass

from .arch import CollectiveKind
from .hwspec import SystemSpec


@dataclass(frozen=True)
class GroupLocality:
    group_size: int
    gpus_per_nvs: int = 1
    nics_available: int = 1

    def __post_init__(self):
        n, g = self.group_size, self.gpus_per_nvs
        if n < 1 or g < 1 or n % g:
            raise ValueError(f"gpus_per_nvs={g} must divide group_size={n}")
        if self.nics_available < 1:
            raise ValueError("nics_available must be >= 1")

    @classmethod
    def for_group(cls, n: int, g: int, sys: SystemSpec) -> "GroupLocality":
        """NICs follow GPUs: a group using g of the n_nvs slots gets that share."""
        return cls(n, g, max(1, (sys.n_nic * g) // sys.n_nvs))


def _latency(loc: GroupLocality, sys: SystemSpec) -> float:
    n, g = loc.group_size, loc.gpus_per_nvs
    if g == n:
        return sys.nvs_latency * (n - 1)
    domains = n // g
    return sys.ib_latency * (domains - 1) + sys.nvs_latency * (n - domains)


def _inverse_bw(loc: GroupLocality, sys: SystemSpec) -> float:
    """Seconds per byte of the ring's bottleneck link."""
    if loc.gpus_per_nvs == loc.group_size:
        return 1.0 / sys.nvs_bw_eff
    return max(1.0 / (loc.nics_available * sys.ib_bw_eff), 1.0 / sys.nvs_bw_eff)


def ring_time(kind, volume: float, loc: GroupLocality, sys: SystemSpec) -> float:
    """AllGather / ReduceScatter of ``volume`` bytes per GPU (the full,
    gathered size) with the ring algorithm."""
    kind = CollectiveKind(kind)
    if kind not in (CollectiveKind.ALLGATHER, CollectiveKind.REDUCESCATTER):
        raise ValueError(f"ring_time handles AG/RS only, got {kind}")
    n = loc.group_size
    if n == 1:
        return 0.0
    return _latency(loc, sys) + (n - 1) / n * volume * _inverse_bw(loc, sys)


def allreduce_time(volume: float, loc: GroupLocality, sys: SystemSpec) -> float:
    return (ring_time(CollectiveKind.REDUCESCATTER, volume, loc, sys)
            + ring_time(CollectiveKind.ALLGATHER, volume, loc, sys))


def broadcast_time(volume: float, loc: GroupLocality, sys: SystemSpec) -> float:
    """Pipelined ring broadcast: the root pushes the whole volume through."""
    if loc.group_size == 1:
        return 0.0
    return _latency(loc, sys) + volume * _inverse_bw(loc, sys)


def reduce_time(volume: float, loc: GroupLocality, sys: SystemSpec) -> float:
    return broadcast_time(volume, loc, sys)


def p2p_time(volume: float, adjacent_in_nvs: bool, sys: SystemSpec) -> float:
    if adjacent_in_nvs:
        return sys.nvs_latency + volume / sys.nvs_bw_eff
    return sys.ib_latency + volume / sys.ib_bw_eff


def collective_time(kind, volume: float, loc: GroupLocality, sys: SystemSpec) -> float:
    kind = CollectiveKind(kind)
    if kind in (CollectiveKind.ALLGATHER, CollectiveKind.REDUCESCATTER):
        return ring_time(kind, volume, loc, sys)
    if kind is CollectiveKind.ALLREDUCE:
        return allreduce_time(volume, loc, sys)
    if kind is CollectiveKind.BROADCAST:
        return broadcast_time(volume, loc, sys)
    if kind is CollectiveKind.REDUCE:
        return reduce_time(volume, loc, sys)
    raise ValueError(f"use p2p_time for {kind}")
