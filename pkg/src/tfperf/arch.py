"""Transformer architectures and their per-block operation sequences.

A block is LN -> Q/K/V projections -> fused logit/softmax/attend -> output
projection -> LN -> MLP (two matmuls around a bias + GELU), with optional
dropout after each residual branch. ``block_ops`` lays the block out with
the local tensor shapes one GPU sees under a given tensor-parallel strategy.
"""
from __future__ import annotations

import enum
import functools
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import yaml

from .config import ParallelConfig, Strategy


@dataclass(frozen=True)
class TransformerSpec:
    l: int  # sequence length (tokens or patches)
    e: int  # embedding dimension
    f: int  # MLP hidden dimension
    h: int  # attention heads
    d: int  # number of blocks
    include_dropout: bool = True

    def __post_init__(self):
        for name in ("l", "e", "f", "h", "d"):
            value = getattr(self, name)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
            object.__setattr__(self, name, int(value))
        if self.e % self.h:
            raise ValueError(f"e={self.e} is not divisible by h={self.h}")

    @property
    def e_h(self) -> int:
        return self.e // self.h

    def as_dict(self) -> dict:
        return asdict(self)


PRESETS = {
    "gpt3-1t": TransformerSpec(l=2048, e=25600, f=4 * 25600, h=160, d=128),
    "vit-64k": TransformerSpec(l=64800, e=12288, f=4 * 12288, h=64, d=48),
}


def builtin_spec(name: str) -> TransformerSpec:
    try:
        return PRESETS[name.strip().lower()]
    except KeyError:
        raise ValueError(f"unknown model preset {name!r}; "
                         f"available: {sorted(PRESETS)}") from None


def load_spec(path) -> TransformerSpec:
    """Read an architecture from a YAML/JSON file with keys l, e, f, h, d."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping of architecture keys")
    data = dict(data.get("model", data))
    data.pop("name", None)
    unknown = set(data) - {"l", "e", "f", "h", "d", "include_dropout"}
    if unknown:
        raise ValueError(f"{path}: unknown keys {sorted(unknown)}")
    missing = {"l", "e", "h", "d"} - set(data)
    if missing:
        raise ValueError(f"{path}: missing keys {sorted(missing)}")
    data.setdefault("f", 4 * int(data["e"]))
    return TransformerSpec(**data)


def save_spec(spec: TransformerSpec, path) -> None:
    Path(path).write_text(yaml.safe_dump(spec.as_dict(), sort_keys=False))


def resolve_spec(value: str) -> TransformerSpec:
    """Preset name or path to a config file."""
    if value.strip().lower() in PRESETS:
        return builtin_spec(value)
    if Path(value).exists():
        return load_spec(value)
    raise ValueError(f"{value!r} is neither a model preset {sorted(PRESETS)} "
                     f"nor an existing file")


def param_count(spec: TransformerSpec) -> int:
    """Parameters of the repeated blocks (embeddings and head excluded)."""
    e, f = spec.e, spec.f
    # W_Q, W_K, W_V, W_p; W_1, W_2; b_1, b_2; two LayerNorm gain/bias pairs
    return spec.d * (4 * e * e + 2 * e * f + f + e + 4 * e)


class OpKind(str, enum.Enum):
    MATMUL = "matmul"
    FUSED_ATTENTION = "fused_attention"
    LAYERNORM = "layernorm"
    SOFTMAX = "softmax"
    GELU = "gelu"
    DROPOUT = "dropout"
    BIAS_ADD = "bias_add"


class CollectiveKind(str, enum.Enum):
    ALLGATHER = "allgather"
    REDUCESCATTER = "reducescatter"
    ALLREDUCE = "allreduce"
    BROADCAST = "broadcast"
    REDUCE = "reduce"
    P2P = "p2p"


@dataclass(frozen=True)
class TensorShape:
    """Local tensor held by one GPU.

    ``split`` is how many GPUs the global tensor is partitioned over and
    ``replicas`` how many GPUs hold an identical copy of this piece.
    ``partial`` marks unreduced partial sums awaiting a reduction.
    """

    name: str
    dims: tuple[tuple[str, int], ...]
    itemsize: int = 2
    split: int = 1
    replicas: int = 1
    partial: bool = False

    def __post_init__(self):
        if self.itemsize not in (1, 2, 4):
            raise ValueError(f"{self.name}: unsupported element size {self.itemsize}")
        for dim, extent in self.dims:
            if extent < 1 or int(extent) != extent:
                raise ValueError(f"{self.name}: extent {dim}={extent} is not a "
                                 f"positive integer")

    @property
    def extents(self) -> tuple[int, ...]:
        return tuple(int(x) for _, x in self.dims)

    @property
    def numel(self) -> int:
        return math.prod(self.extents)

    @property
    def nbytes(self) -> int:
        return self.numel * self.itemsize


@dataclass(frozen=True)
class Transfer:
    """A collective attached to an op, with its volume in elements."""

    kind: CollectiveKind
    axis: str  # "tp1" or "tp2": which GPU group of the TP grid
    elements: int
    result: Optional[TensorShape] = None


@dataclass(frozen=True)
class BlockOp:
    kind: OpKind
    name: str
    inputs: tuple[TensorShape, ...]
    output: TensorShape
    weight: Optional[TensorShape] = None
    saved: tuple[TensorShape, ...] = ()
    comm: tuple[Transfer, ...] = ()
    gemm: Optional[tuple[int, int, int]] = None  # (m, k, n) of the local product
    attn: Optional[tuple[int, int, int, int, int]] = None  # (b, h, l_q, l_kv, e_h)
    summa: bool = False

    @property
    def stores_activation(self) -> bool:
        return bool(self.saved)

    @property
    def numel(self) -> int:
        return self.output.numel


def check_divisibility(spec: TransformerSpec, pconf: ParallelConfig) -> list[str]:
    """Return the violated shape constraints (empty when pconf fits spec)."""
    s = Strategy.parse(pconf.strategy)
    n1, n2 = pconf.n1, pconf.n2
    errors = []

    def need(cond, msg):
        if not cond:
            errors.append(msg)

    need(min(n1, n2, pconf.n_p, pconf.n_d, pconf.b_m, pconf.m, pconf.n_b) >= 1,
         "all parallel degrees, b_m, m and n_b must be >= 1")
    if errors:
        return errors
    need(spec.d % pconf.n_p == 0, f"n_p={pconf.n_p} does not divide depth d={spec.d}")
    if s is Strategy.TP1D:
        need(n2 == 1, f"n2={n2} must be 1 for 1D tensor parallelism")
    for dim in ("h", "e", "f"):
        need(getattr(spec, dim) % n1 == 0, f"n1={n1} does not divide {dim}={getattr(spec, dim)}")
    need(spec.l % n2 == 0, f"n2={n2} does not divide l={spec.l}")
    need(spec.l % (n1 * n2) == 0, f"n1*n2={n1 * n2} does not divide l={spec.l}")
    if s is Strategy.TP2D_SUMMA:
        for dim in ("e", "f"):
            need(getattr(spec, dim) % n2 == 0,
                 f"n2={n2} does not divide {dim}={getattr(spec, dim)} (SUMMA weights)")
            need(getattr(spec, dim) % pconf.n_b == 0,
                 f"n_b={pconf.n_b} does not divide {dim}={getattr(spec, dim)}")
    else:
        need(pconf.n_b == 1, f"n_b={pconf.n_b} must be 1 outside SUMMA")
    return errors


def _t(name, split=1, replicas=1, itemsize=2, partial=False, **dims):
    return TensorShape(name, tuple(dims.items()), itemsize, split, replicas, partial)


def _ln_weight(name, e, n1, n2, summa):
    # gain and bias; SUMMA splits them with the embedding over n1
    if summa:
        return _t(name, n1, n2, p=2, e=e // n1)
    return _t(name, 1, n1 * n2, p=2, e=e)


def block_ops(spec: TransformerSpec, pconf: ParallelConfig) -> list[BlockOp]:
    """Ordered ops of one block for one microbatch, with local shapes."""
    errors = check_divisibility(spec, pconf)
    if errors:
        raise ValueError("invalid parallel config: " + "; ".join(errors))
    return list(_cached_ops(spec, Strategy.parse(pconf.strategy), pconf.n1, pconf.n2, pconf.b_m))


@functools.lru_cache(maxsize=4096)
def _cached_ops(spec, strategy, n1, n2, b_m) -> tuple[BlockOp, ...]:
    # the search asks for the same layout across many placements and depths
    if strategy is Strategy.TP1D:
        ops = _ops_tp(spec, b_m, n1, 1, summa=False)
    else:
        ops = _ops_tp(spec, b_m, n1, n2, summa=strategy is Strategy.TP2D_SUMMA)
    if not spec.include_dropout:
        ops = [op for op in ops if op.kind is not OpKind.DROPOUT]
    return tuple(ops)


def _ops_tp(spec, b, n1, n2, summa):
    # 1D TP is the n2 == 1 case of the 2D table; SUMMA swaps the weight
    # matmuls for broadcast-based products with fully partitioned weights.
    l, e, f, h, eh = spec.l, spec.e, spec.f, spec.h, spec.e_h
    nt = n1 * n2
    lt, l2 = l // nt, l // n2
    AG, RS, AR, BC = (CollectiveKind.ALLGATHER, CollectiveKind.REDUCESCATTER,
                      CollectiveKind.ALLREDUCE, CollectiveKind.BROADCAST)
    ops: list[BlockOp] = []

    def mask(src: TensorShape, name):
        return TensorShape(name, src.dims, 1, src.split, src.replicas)

    # --- self-attention ---
    if summa:
        x = _t("x", nt, b=b, l=l2, e=e // n1)
        x_ln = _t("x_ln", nt, b=b, l=l2, e=e // n1)
        ln1_comm = (Transfer(AR, "tp1", b * l2 * e, x_ln),)
        ln1_out = x_ln
    else:
        x = _t("x", nt, b=b, l=lt, e=e)
        x_ln = _t("x_ln", n2, n1, b=b, l=l2, e=e)
        ln1_out = _t("x_ln_shard", nt, b=b, l=lt, e=e)
        ln1_comm = (Transfer(AG, "tp1", b * l2 * e, x_ln),)
    ops.append(BlockOp(OpKind.LAYERNORM, "ln1", (x,), ln1_out,
                       weight=_ln_weight("ln1_w", e, n1, n2, summa),
                       saved=(x,), comm=ln1_comm))

    for proj in ("q", "k", "v"):
        local = _t(proj, nt, b=b, h=h // n1, l=l2, e_h=eh)
        comm: tuple[Transfer, ...] = ()
        if summa:
            w = _t(f"w_{proj}", nt, e_in=e // n2, e=e // n1)
            comm = (Transfer(BC, "tp1", b * l * e // n2), Transfer(BC, "tp2", e * e // n1))
        else:
            w = _t(f"w_{proj}", n1, n2, e_in=e, e=e // n1)
        if proj != "q" and n2 > 1:
            gathered = _t(proj + "_full", n1, n2, b=b, h=h // n1, l=l, e_h=eh)
            comm = comm + (Transfer(AG, "tp2", b * l * e // n1, gathered),)
        ops.append(BlockOp(OpKind.MATMUL, f"{proj}_proj", (x_ln,), local, weight=w,
                           saved=(x_ln,), comm=comm, gemm=(b * l2, e, e // n1), summa=summa))

    q = _t("q", nt, b=b, h=h // n1, l=l2, e_h=eh)
    if n2 > 1:
        k = _t("k_full", n1, n2, b=b, h=h // n1, l=l, e_h=eh)
        v = _t("v_full", n1, n2, b=b, h=h // n1, l=l, e_h=eh)
    else:
        k = _t("k", nt, b=b, h=h // n1, l=l, e_h=eh)
        v = _t("v", nt, b=b, h=h // n1, l=l, e_h=eh)
    s_out = _t("s", nt, b=b, h=h // n1, l=l2, e_h=eh)
    ops.append(BlockOp(OpKind.FUSED_ATTENTION, "attn", (q, k, v), s_out,
                       saved=(q, k, v, s_out), attn=(b, h // n1, l2, l, eh)))

    y_part = _t("y_partial", 1, 1, partial=True, b=b, l=l2, e=e)
    y = _t("y", nt, b=b, l=lt, e=e)
    ops.append(BlockOp(OpKind.MATMUL, "out_proj", (s_out,), y_part,
                       weight=_t("w_p", n1, n2, e_in=e // n1, e=e), saved=(s_out,),
                       comm=(Transfer(RS, "tp1", b * l2 * e, y),), gemm=(b * l2, e // n1, e)))
    ops.append(BlockOp(OpKind.DROPOUT, "drop1", (y,), y, saved=(mask(y, "mask1"),)))

    # --- MLP ---
    if summa:
        y_in = _t("y", nt, b=b, l=l2, e=e // n1)
        y_ln = _t("y_ln", nt, b=b, l=l2, e=e // n1)
        ln2_comm = (Transfer(AR, "tp1", b * l2 * e, y_ln),)
        ln2_out = y_ln
    else:
        y_in = y
        y_ln = _t("y_ln", n2, n1, b=b, l=l2, e=e)
        ln2_out = _t("y_ln_shard", nt, b=b, l=lt, e=e)
        ln2_comm = (Transfer(AG, "tp1", b * l2 * e, y_ln),)
    ops.append(BlockOp(OpKind.LAYERNORM, "ln2", (y_in,), ln2_out,
                       weight=_ln_weight("ln2_w", e, n1, n2, summa),
                       saved=(y_in,), comm=ln2_comm))

    z = _t("z", nt, b=b, l=l2, f=f // n1)
    if summa:
        w1 = _t("w_1", nt, e=e // n2, f=f // n1)
        fc1_comm = (Transfer(BC, "tp1", b * l * e // n2), Transfer(BC, "tp2", e * f // n1))
    else:
        w1 = _t("w_1", n1, n2, e=e, f=f // n1)
        fc1_comm = ()
    ops.append(BlockOp(OpKind.MATMUL, "fc1", (y_ln,), z, weight=w1, saved=(y_ln,),
                       comm=fc1_comm, gemm=(b * l2, e, f // n1), summa=summa))
    ops.append(BlockOp(OpKind.BIAS_ADD, "bias1", (z,), z, weight=_t("b_1", n1, n2, f=f // n1)))
    g = _t("gelu_out", nt, b=b, l=l2, f=f // n1)
    ops.append(BlockOp(OpKind.GELU, "gelu", (z,), g, saved=(z,)))

    if summa:
        o = _t("o", nt, b=b, l=l2, e=e // n1)
        # second MLP product broadcasts the same volume as the first
        ops.append(BlockOp(OpKind.MATMUL, "fc2", (g,), o, weight=_t("w_2", nt, f=f // n2, e=e // n1),
                           saved=(g,), comm=(Transfer(BC, "tp1", b * l * e // n2),
                                             Transfer(BC, "tp2", e * f // n1)),
                           gemm=(b * l2, f, e // n1), summa=True))
        b2 = _t("b_2", n1, n2, e=e // n1)
    else:
        o = _t("o", nt, b=b, l=lt, e=e)
        o_part = _t("o_partial", 1, 1, partial=True, b=b, l=l2, e=e)
        ops.append(BlockOp(OpKind.MATMUL, "fc2", (g,), o_part, weight=_t("w_2", n1, n2, f=f // n1, e=e),
                           saved=(g,), comm=(Transfer(RS, "tp1", b * l2 * e, o),),
                           gemm=(b * l2, f // n1, e)))
        b2 = _t("b_2", 1, nt, e=e)
    ops.append(BlockOp(OpKind.BIAS_ADD, "bias2", (o,), o, weight=b2))
    ops.append(BlockOp(OpKind.DROPOUT, "drop2", (o,), o, saved=(mask(o, "mask2"),)))
    return ops


def local_param_count(spec: TransformerSpec, pconf: ParallelConfig) -> int:
    """Parameters held by one GPU for its d/n_p blocks (replicated ones counted fully)."""
    per_block = sum(op.weight.numel for op in block_ops(spec, pconf) if op.weight is not None)
    return per_block * (spec.d // pconf.n_p)
