"""FLOP, HBM-traffic, communication and memory counts per GPU.

All byte counts assume FP16 activations/weights (2 bytes per element),
FP32 optimizer state and 1-byte dropout masks.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

from .arch import (BlockOp, CollectiveKind, OpKind, TransformerSpec, block_ops,
                   local_param_count)
from .config import ParallelConfig, Strategy
from .hwspec import SystemSpec

BYTES_FP16 = 2
OPTIMIZER_BYTES_PER_PARAM = 12

# FLOPs per element for the vector ops (first-order; these ops are memory-bound)
VECTOR_FLOPS = {
    OpKind.LAYERNORM: 5,
    OpKind.SOFTMAX: 5,
    OpKind.GELU: 8,
    OpKind.DROPOUT: 1,
    OpKind.BIAS_ADD: 1,
}
# which vector ops must keep their input for the backward pass (bytes/element)
_STORED_INPUT_BYTES = {
    OpKind.LAYERNORM: 2,
    OpKind.GELU: 2,
    OpKind.DROPOUT: 1,  # only the mask
    OpKind.BIAS_ADD: 0,
    OpKind.SOFTMAX: 2,
}


class Phase(str, enum.Enum):
    FWD = "fwd"
    BWD = "bwd"


class Overlap(str, enum.Enum):
    EXPOSED = "exposed"
    OVERLAP_DP_WINDOW = "overlap_dp_window"
    OVERLAP_SUMMA_PIPELINE = "overlap_summa_pipeline"


@dataclass(frozen=True)
class CollectiveEvent:
    kind: CollectiveKind
    volume: float  # bytes per GPU
    group_size: int
    gpus_per_nvs_in_group: int = 1
    overlap: Overlap = Overlap.EXPOSED
    op: str = ""

    def __post_init__(self):
        n, g = self.group_size, self.gpus_per_nvs_in_group
        if not (1 <= g <= n and n % g == 0):
            raise ValueError(f"gpus_per_nvs_in_group={g} must divide group_size={n}")


@dataclass(frozen=True)
class OpCost:
    """Cost of one kernel. FLOPs are split by the unit that executes them."""

    tensor_flops: float = 0
    vector_flops: float = 0
    hbm_bytes: float = 0
    comm: tuple[CollectiveEvent, ...] = ()
    name: str = ""

    def __post_init__(self):
        if self.tensor_flops < 0 or self.vector_flops < 0 or self.hbm_bytes < 0:
            raise ValueError("OpCost counts must be non-negative")

    @property
    def flops(self) -> float:
        return self.tensor_flops + self.vector_flops

    @property
    def uses_tensor_cores(self) -> bool:
        return self.tensor_flops > 0

    def __add__(self, other: "OpCost") -> "OpCost":
        return OpCost(self.tensor_flops + other.tensor_flops,
                      self.vector_flops + other.vector_flops,
                      self.hbm_bytes + other.hbm_bytes,
                      self.comm + other.comm, self.name or other.name)

    def scaled(self, factor) -> "OpCost":
        return OpCost(self.tensor_flops * factor, self.vector_flops * factor,
                      self.hbm_bytes * factor, self.comm, self.name)


def matmul_cost(m: int, k: int, n: int) -> OpCost:
    """C = A @ B with A (m, k), B (k, n): (2k - 1) m n FLOPs, each tensor touched once."""
    if min(m, k, n) < 1:
        raise ValueError(f"matmul extents must be >= 1, got {(m, k, n)}")
    return OpCost(tensor_flops=(2 * k - 1) * m * n,
                  hbm_bytes=BYTES_FP16 * (m * k + k * n + m * n), name="matmul")


def matmul_backward_costs(m: int, k: int, n: int) -> tuple[OpCost, OpCost]:
    """dA = dC B^T and dB = A^T dC, each costed as one forward-sized product.

    The two gradient products read/write exactly the same element counts as
    the forward product, and together carry twice its FLOPs.
    """
    fwd = matmul_cost(m, k, n)
    return (OpCost(fwd.tensor_flops, 0, fwd.hbm_bytes, name="matmul_dA"),
            OpCost(fwd.tensor_flops, 0, fwd.hbm_bytes, name="matmul_dB"))


def fused_attention_cost(b_m: int, h_loc: int, l_q: int, l_kv: int, e_h: int,
                         phase=Phase.FWD) -> OpCost:
    """Fused logit -> softmax -> attend; the l_q x l_kv matrix never hits HBM."""
    if min(b_m, h_loc, l_q, l_kv, e_h) < 1:
        raise ValueError("attention extents must be >= 1")
    phase = Phase(phase)
    heads = b_m * h_loc
    matmul_flops = heads * ((2 * e_h - 1) * l_q * l_kv + (2 * l_kv - 1) * l_q * e_h)
    softmax_flops = VECTOR_FLOPS[OpKind.SOFTMAX] * heads * l_q * l_kv
    q_size = heads * l_q * e_h
    kv_size = heads * l_kv * e_h
    if phase is Phase.FWD:
        # reads Q, K, V; writes S
        return OpCost(matmul_flops, softmax_flops,
                      BYTES_FP16 * (2 * q_size + 2 * kv_size), name="attn")
    # recompute of the forward plus two gradient products per forward product;
    # reads Q, K, V, S, dS and writes dQ, dK, dV
    return OpCost(3 * matmul_flops, 2 * softmax_flops,
                  BYTES_FP16 * (4 * q_size + 4 * kv_size), name="attn_bwd")


def unfused_attention_bytes(b_m: int, h_loc: int, l_q: int, l_kv: int, e_h: int) -> int:
    """HBM bytes of logit, softmax and attend run as three separate kernels."""
    heads = b_m * h_loc
    logits = matmul_cost(l_q, e_h, l_kv).hbm_bytes * heads
    softmax = vector_op_cost(OpKind.SOFTMAX, heads * l_q * l_kv).hbm_bytes
    attend = matmul_cost(l_q, l_kv, e_h).hbm_bytes * heads
    return logits + softmax + attend


def vector_op_cost(kind, numel: int, phase=Phase.FWD) -> OpCost:
    kind = OpKind(kind)
    if kind not in VECTOR_FLOPS:
        raise ValueError(f"{kind} is not a vector op")
    if numel < 1:
        raise ValueError("numel must be >= 1")
    flops = VECTOR_FLOPS[kind] * numel
    if Phase(phase) is Phase.FWD:
        nbytes = 2 * numel + 2 * numel
        if kind is OpKind.DROPOUT:
            nbytes += numel  # mask write
    else:
        # read the incoming gradient, write the outgoing one, reread what was stored
        nbytes = 4 * numel + _STORED_INPUT_BYTES[kind] * numel
    return OpCost(vector_flops=flops, hbm_bytes=nbytes, name=kind.value)


# --- per-block costs -----------------------------------------------------

_CONJUGATE = {
    CollectiveKind.ALLGATHER: CollectiveKind.REDUCESCATTER,
    CollectiveKind.REDUCESCATTER: CollectiveKind.ALLGATHER,
    CollectiveKind.ALLREDUCE: CollectiveKind.ALLREDUCE,
}


def _axis_group(pconf: ParallelConfig, axis: str) -> tuple[int, int]:
    a1, a2, _, _ = pconf.nvs_assign
    return (pconf.n1, a1) if axis == "tp1" else (pconf.n2, a2)


@dataclass(frozen=True)
class OpEntry:
    """Costs of one block op in one phase.

    ``kernels`` run back to back. For SUMMA products, ``kernels[i]`` is one
    panel of product i, run ``panels`` times and overlapped with the panel
    collectives in ``summa_pairs[i]``.
    """

    op: str
    kernels: tuple[OpCost, ...]
    comm: tuple[CollectiveEvent, ...] = ()
    panels: int = 1
    summa_pairs: tuple[tuple[CollectiveEvent, ...], ...] = ()


@dataclass(frozen=True)
class BlockCost:
    total: OpCost
    entries: tuple[OpEntry, ...]
    events: tuple[CollectiveEvent, ...]


def _events_for(op: BlockOp, pconf: ParallelConfig, phase: Phase) -> list[CollectiveEvent]:
    events = []
    for t in op.comm:
        if t.kind is CollectiveKind.BROADCAST:
            continue  # SUMMA panel broadcasts are handled with their product
        kind = t.kind if phase is Phase.FWD else _CONJUGATE[t.kind]
        n, g = _axis_group(pconf, t.axis)
        events.append(CollectiveEvent(kind, BYTES_FP16 * t.elements, n, g,
                                      Overlap.EXPOSED, op.name))
    return events


def _summa_pairs(op: BlockOp, pconf: ParallelConfig, phase: Phase):
    """Per-panel broadcast pairs of a SUMMA product (two for the backward,
    one per transposed product, each a broadcast plus a reduce)."""
    parts = [t for t in op.comm if t.kind is CollectiveKind.BROADCAST]
    n_b = pconf.n_b
    pairs = []
    kinds = ([(CollectiveKind.BROADCAST, CollectiveKind.BROADCAST)] if phase is Phase.FWD
             else [(CollectiveKind.BROADCAST, CollectiveKind.REDUCE)] * 2)
    for k_act, k_w in kinds:
        pair = []
        for t, kind in zip(parts, (k_act, k_w)):
            n, g = _axis_group(pconf, t.axis)
            pair.append(CollectiveEvent(kind, BYTES_FP16 * t.elements / n_b, n, g,
                                        Overlap.OVERLAP_SUMMA_PIPELINE, op.name))
        pairs.append(tuple(pair))
    return tuple(pairs)


def op_entries(spec: TransformerSpec, pconf: ParallelConfig, phase=Phase.FWD,
               ops: Optional[list[BlockOp]] = None) -> list[OpEntry]:
    phase = Phase(phase)
    ops = block_ops(spec, pconf) if ops is None else ops
    entries = []
    for op in ops:
        comm = tuple(_events_for(op, pconf, phase))
        if op.kind is OpKind.MATMUL:
            m, k, n = op.gemm
            if op.summa:
                # one panel kernel per product: one forward, two transposed backward
                pairs = _summa_pairs(op, pconf, phase)
                panel = matmul_cost(m, k // pconf.n_b, n)
                entries.append(OpEntry(op.name, (panel,) * len(pairs), comm,
                                       panels=pconf.n_b, summa_pairs=pairs))
            elif phase is Phase.FWD:
                entries.append(OpEntry(op.name, (matmul_cost(m, k, n),), comm))
            else:
                entries.append(OpEntry(op.name, matmul_backward_costs(m, k, n), comm))
        elif op.kind is OpKind.FUSED_ATTENTION:
            entries.append(OpEntry(op.name, (fused_attention_cost(*op.attn, phase=phase),), comm))
        else:
            entries.append(OpEntry(op.name, (vector_op_cost(op.kind, op.numel, phase),), comm))
    return entries


def block_cost(spec: TransformerSpec, pconf: ParallelConfig, phase=Phase.FWD) -> BlockCost:
    """Summed cost of one block for one microbatch on one GPU, plus its TP
    collectives (SUMMA panel collectives listed at full, unsplit volume)."""
    phase = Phase(phase)
    entries = op_entries(spec, pconf, phase)
    total = OpCost(name=f"block_{phase.value}")
    events: list[CollectiveEvent] = []
    for entry in entries:
        for kernel in entry.kernels:
            total = total + kernel.scaled(entry.panels)
        events.extend(entry.comm)
        for pair in entry.summa_pairs:
            events.extend(CollectiveEvent(ev.kind, ev.volume * entry.panels, ev.group_size,
                                          ev.gpus_per_nvs_in_group, ev.overlap, ev.op)
                          for ev in pair)
    total = OpCost(total.tensor_flops, total.vector_flops, total.hbm_bytes,
                   tuple(events), total.name)
    return BlockCost(total, tuple(entries), tuple(events))


def tp_volume(events) -> float:
    return sum(ev.volume for ev in events)


# --- data / pipeline parallel ------------------------------------------------

def dp_and_pp_events(spec: TransformerSpec, pconf: ParallelConfig) -> list[CollectiveEvent]:
    """Per-iteration DP gradient RS + weight AG and the pipeline P2P traffic."""
    events = []
    _, _, ap, _ = pconf.nvs_assign
    group, g = pconf.dp_group, pconf.dp_nvs
    if group > 1:
        volume = BYTES_FP16 * local_param_count(spec, pconf)
        for kind in (CollectiveKind.REDUCESCATTER, CollectiveKind.ALLGATHER):
            events.append(CollectiveEvent(kind, volume, group, g, Overlap.OVERLAP_DP_WINDOW, "dp"))
    if pconf.n_p > 1:
        volume = pp_volume(spec, pconf)
        events.append(CollectiveEvent(CollectiveKind.P2P, volume, pconf.n_p, ap,
                                      Overlap.EXPOSED, "pp"))
    return events


def pp_volume(spec: TransformerSpec, pconf: ParallelConfig) -> float:
    """Activation bytes sent across one stage boundary for all m microbatches."""
    return BYTES_FP16 * pconf.m * pconf.b_m * spec.l * spec.e / pconf.n_t


# --- memory --------------------------------------------------------------

@dataclass(frozen=True)
class MemoryFootprint:
    weights: float
    gradients: float
    optimizer: float
    activations: float
    masks: float
    reserve: float = 0.0
    total: float = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "total", self.weights + self.gradients + self.optimizer
                           + self.activations + self.masks + self.reserve)

    def as_dict(self) -> dict:
        return {k: getattr(self, k) for k in
                ("weights", "gradients", "optimizer", "activations", "masks", "reserve", "total")}


def stored_activation_bytes(spec: TransformerSpec, pconf: ParallelConfig,
                            ops: Optional[list[BlockOp]] = None) -> tuple[int, int]:
    """(activation bytes, mask bytes) one block keeps for one microbatch.

    A tensor saved by several ops (e.g. the LN output feeding Q, K and V)
    is stored once.
    """
    ops = block_ops(spec, pconf) if ops is None else ops
    seen: dict[str, int] = {}
    masks = 0
    for op in ops:
        for t in op.saved:
            if op.kind is OpKind.DROPOUT:
                masks += t.nbytes
            else:
                seen.setdefault(t.name, t.nbytes)
    return sum(seen.values()), masks


def memory_footprint(spec: TransformerSpec, pconf: ParallelConfig,
                     sys: Optional[SystemSpec] = None) -> MemoryFootprint:
    ops = block_ops(spec, pconf)
    params = sum(op.weight.numel for op in ops if op.weight is not None) * (spec.d // pconf.n_p)
    act, masks = stored_activation_bytes(spec, pconf, ops)
    # 1F1B keeps at most n_p microbatches in flight
    in_flight = min(pconf.m, pconf.n_p) * (spec.d // pconf.n_p)
    return MemoryFootprint(
        weights=BYTES_FP16 * params,
        gradients=BYTES_FP16 * params,
        optimizer=OPTIMIZER_BYTES_PER_PARAM * params / pconf.n_d,
        activations=act * in_flight,
        masks=masks * in_flight,
        reserve=sys.hbm_reserve if sys is not None else 0.0,
    )
