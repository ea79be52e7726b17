"""Iteration time: rooflines, exposed communication, 1F1B bubble, DP overlap."""
from __future__ import annotations

import math
from dataclasses import dataclass

from .arch import CollectiveKind, TransformerSpec
from .config import ParallelConfig
from .counting import (CollectiveEvent, MemoryFootprint, OpCost, Phase,
                       dp_and_pp_events, memory_footprint, op_entries)
from .hwspec import SystemSpec
from .netmodel import GroupLocality, collective_time, p2p_time

SECONDS_PER_DAY = 86400.0


@dataclass(frozen=True)
class TimeBreakdown:
    """Seconds per iteration.

    ``compute``, ``hbm_bound_extra`` and ``tp_comm_exposed`` cover the m
    steady-state microbatches; ``total`` is the sum of the six components.
    """

    compute: float
    hbm_bound_extra: float
    tp_comm_exposed: float
    dp_comm_exposed: float
    pp_comm: float
    bubble: float
    total: float
    t_f: float
    t_b: float
    steady: float

    COMPONENTS = ("compute", "hbm_bound_extra", "tp_comm_exposed", "bubble",
                  "dp_comm_exposed", "pp_comm")

    def fractions(self) -> dict:
        return {k: (getattr(self, k) / self.total if self.total else 0.0)
                for k in self.COMPONENTS}

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                self.COMPONENTS + ("total", "t_f", "t_b", "steady")}


@dataclass(frozen=True)
class Estimate:
    config: ParallelConfig
    breakdown: TimeBreakdown
    footprint: MemoryFootprint
    feasible: bool

    @property
    def total(self) -> float:
        return self.breakdown.total


def _compute_time(cost: OpCost, sys: SystemSpec) -> float:
    t = cost.tensor_flops / sys.tensor_flops + cost.vector_flops / sys.vector_flops
    if cost.uses_tensor_cores:
        t += sys.flops_latency
    return t


def _memory_time(cost: OpCost, sys: SystemSpec) -> float:
    return cost.hbm_bytes / sys.hbm_bw_eff


def roofline_time(cost: OpCost, sys: SystemSpec) -> float:
    return max(_compute_time(cost, sys), _memory_time(cost, sys))


def _split_roofline(cost: OpCost, sys: SystemSpec) -> tuple[float, float]:
    """(compute seconds, extra seconds spent waiting on HBM)."""
    c = _compute_time(cost, sys)
    return c, max(0.0, _memory_time(cost, sys) - c)


def event_time(ev: CollectiveEvent, sys: SystemSpec) -> float:
    loc = GroupLocality.for_group(ev.group_size, ev.gpus_per_nvs_in_group, sys)
    return collective_time(ev.kind, ev.volume, loc, sys)


@dataclass(frozen=True)
class StageTime:
    """One block, one microbatch, one phase: (compute, hbm extra, exposed TP comm)."""

    compute: float
    hbm_extra: float
    comm: float

    @property
    def total(self) -> float:
        return self.compute + self.hbm_extra + self.comm


def block_phase_time(spec: TransformerSpec, pconf: ParallelConfig, sys: SystemSpec,
                     phase=Phase.FWD) -> StageTime:
    compute = extra = comm = 0.0
    for entry in op_entries(spec, pconf, phase):
        comm += sum(event_time(ev, sys) for ev in entry.comm)
        if entry.summa_pairs:
            for kernel, pair in zip(entry.kernels, entry.summa_pairs):
                c, x = _split_roofline(kernel, sys)
                t_panel = c + x
                t_pair = sum(event_time(ev, sys) for ev in pair)
                # first panel's broadcasts are a prologue; later ones hide behind compute
                compute += entry.panels * c
                extra += entry.panels * x
                comm += t_pair + entry.panels * max(0.0, t_pair - t_panel)
        else:
            for kernel in entry.kernels:
                c, x = _split_roofline(kernel, sys)
                compute += c
                extra += x
    return StageTime(compute, extra, comm)


def microbatch_stage_times(spec: TransformerSpec, pconf: ParallelConfig,
                           sys: SystemSpec) -> tuple[float, float]:
    """(t_f, t_b) of one pipeline stage for one microbatch."""
    blocks = spec.d // pconf.n_p
    fwd = block_phase_time(spec, pconf, sys, Phase.FWD)
    bwd = block_phase_time(spec, pconf, sys, Phase.BWD)
    return blocks * fwd.total, blocks * bwd.total


def dp_pp_times(spec: TransformerSpec, pconf: ParallelConfig,
                sys: SystemSpec) -> tuple[float, float, float]:
    """(t_RS, t_AG, t_PP) per iteration."""
    t_rs = t_ag = t_pp = 0.0
    for ev in dp_and_pp_events(spec, pconf):
        if ev.kind is CollectiveKind.P2P:
            t_pp += p2p_time(ev.volume, pconf.nvs_assign[2] == pconf.n_p, sys)
        elif ev.kind is CollectiveKind.REDUCESCATTER:
            t_rs += event_time(ev, sys)
        else:
            t_ag += event_time(ev, sys)
    return t_rs, t_ag, t_pp


def assemble(pconf: ParallelConfig, fwd: StageTime, bwd: StageTime, blocks: int,
             t_rs: float, t_ag: float, t_pp: float, footprint: MemoryFootprint,
             sys: SystemSpec) -> Estimate:
    """Combine per-block stage times and iteration-level collectives."""
    m = pconf.m
    t_f, t_b = blocks * fwd.total, blocks * bwd.total
    per_mb = t_f + t_b
    compute = m * blocks * (fwd.compute + bwd.compute)
    extra = m * blocks * (fwd.hbm_extra + bwd.hbm_extra)
    tp = m * blocks * (fwd.comm + bwd.comm)
    bubble = (pconf.n_p - 1) * per_mb
    # gradient RS hides behind the last backward, weight AG behind the first forward
    dp = max(0.0, t_rs - t_b) + max(0.0, t_ag - t_f)
    total = compute + extra + tp + bubble + dp + t_pp
    breakdown = TimeBreakdown(compute=compute, hbm_bound_extra=extra, tp_comm_exposed=tp,
                              dp_comm_exposed=dp, pp_comm=t_pp, bubble=bubble, total=total,
                              t_f=t_f, t_b=t_b, steady=m * per_mb)
    return Estimate(pconf, breakdown, footprint, footprint.total <= sys.hbm_capacity)


def iteration_estimate(spec: TransformerSpec, pconf: ParallelConfig,
                       sys: SystemSpec) -> Estimate:
    fwd = block_phase_time(spec, pconf, sys, Phase.FWD)
    bwd = block_phase_time(spec, pconf, sys, Phase.BWD)
    t_rs, t_ag, t_pp = dp_pp_times(spec, pconf, sys)
    return assemble(pconf, fwd, bwd, spec.d // pconf.n_p, t_rs, t_ag, t_pp,
                    memory_footprint(spec, pconf, sys), sys)


def training_time(est: Estimate, total_samples: float, b: int) -> float:
    """Days to process ``total_samples`` at global batch ``b``."""
    if b <= 0:
        raise ValueError("global batch must be > 0")
    return math.ceil(total_samples / b) * est.total / SECONDS_PER_DAY


def samples_from_tokens(tokens: float, seq_len: int) -> float:
    return tokens / seq_len
