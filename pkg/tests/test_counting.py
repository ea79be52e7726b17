import itertools

import pytest
import sympy
from hypothesis import given, settings, strategies as st

from tfperf.arch import (CollectiveKind, OpKind, TransformerSpec, block_ops,
                         builtin_spec, local_param_count, param_count)
from tfperf.config import ParallelConfig
from tfperf.counting import (BYTES_FP16, CollectiveEvent, MemoryFootprint, OpCost, Phase,
                             block_cost, dp_and_pp_events, fused_attention_cost,
                             matmul_backward_costs, matmul_cost, memory_footprint,
                             unfused_attention_bytes, vector_op_cost)


def brute_force_matmul(m, k, n):
    """Count scalar operations and distinct elements touched by a naive product."""
    mults = adds = 0
    touched = set()
    for i in range(m):
        for j in range(n):
            acc = None
            for p in range(k):
                touched.add(("a", i, p))
                touched.add(("b", p, j))
                mults += 1
                if acc is None:
                    acc = 1
                else:
                    adds += 1
            touched.add(("c", i, j))
    return mults + adds, 2 * len(touched)


def test_matmul_matches_brute_force_small():
    for m, k, n in itertools.product(range(1, 5), repeat=3):
        flops, nbytes = brute_force_matmul(m, k, n)
        cost = matmul_cost(m, k, n)
        assert (cost.tensor_flops, cost.hbm_bytes) == (flops, nbytes)
        assert cost.vector_flops == 0 and cost.comm == ()


def test_matmul_examples():
    assert (matmul_cost(1, 1, 1).flops, matmul_cost(1, 1, 1).hbm_bytes) == (1, 6)
    assert (matmul_cost(2, 3, 4).flops, matmul_cost(2, 3, 4).hbm_bytes) == (40, 52)
    assert matmul_cost(2048, 25600, 3200).flops == pytest.approx(3.355e11, rel=1e-3)


def test_matmul_rejects_empty():
    with pytest.raises(ValueError):
        matmul_cost(0, 1, 1)


def test_opcost_rejects_negative():
    with pytest.raises(ValueError):
        OpCost(tensor_flops=-1)


def test_backward_is_two_forward_products():
    fwd = matmul_cost(7, 5, 3)
    da, db = matmul_backward_costs(7, 5, 3)
    assert da.tensor_flops + db.tensor_flops == 2 * fwd.tensor_flops
    assert da.hbm_bytes == db.hbm_bytes == fwd.hbm_bytes


def test_fused_attention_unit_case():
    cost = fused_attention_cost(1, 1, 1, 1, 1)
    assert cost.tensor_flops == 2
    assert cost.vector_flops == 5


def test_fused_attention_symbolic_composition():
    b, h, lq, lkv, eh = sympy.symbols("b h l_q l_kv e_h", positive=True, integer=True)
    fwd_matmul = b * h * ((2 * eh - 1) * lq * lkv + (2 * lkv - 1) * lq * eh)
    vals = {b: 2, h: 3, lq: 5, lkv: 7, eh: 4}
    fwd = fused_attention_cost(2, 3, 5, 7, 4, Phase.FWD)
    bwd = fused_attention_cost(2, 3, 5, 7, 4, Phase.BWD)
    assert fwd.tensor_flops == fwd_matmul.subs(vals)
    # two gradient products per forward product plus one recompute
    assert bwd.tensor_flops == sympy.expand(2 * fwd_matmul + fwd_matmul).subs(vals)


@given(st.integers(1, 6), st.integers(1, 6), st.integers(1, 64), st.integers(1, 64),
       st.integers(1, 32))
def test_fused_attention_against_composed_matmuls(b, h, lq, lkv, eh):
    fwd = fused_attention_cost(b, h, lq, lkv, eh)
    composed = b * h * (matmul_cost(lq, eh, lkv).flops + matmul_cost(lq, lkv, eh).flops)
    assert fwd.tensor_flops == composed
    assert fused_attention_cost(b, h, lq, lkv, eh, Phase.BWD).tensor_flops == 3 * composed
    # fusion never reads or writes the l_q x l_kv matrix
    assert fwd.hbm_bytes < unfused_attention_bytes(b, h, lq, lkv, eh)
    q, kv = b * h * lq * eh, b * h * lkv * eh
    assert fwd.hbm_bytes == 2 * (2 * q + 2 * kv)


def test_vector_op_examples():
    ln = vector_op_cost(OpKind.LAYERNORM, 10)
    assert (ln.flops, ln.hbm_bytes) == (50, 40)
    assert vector_op_cost(OpKind.DROPOUT, 1).hbm_bytes == 5
    with pytest.raises(ValueError):
        vector_op_cost(OpKind.MATMUL, 10)
    with pytest.raises(ValueError):
        vector_op_cost("nope", 10)


@given(st.sampled_from([OpKind.LAYERNORM, OpKind.SOFTMAX, OpKind.GELU, OpKind.DROPOUT,
                        OpKind.BIAS_ADD]),
       st.integers(1, 10**9), st.sampled_from(list(Phase)))
def test_vector_ops_linear(kind, n, phase):
    one, two = vector_op_cost(kind, n, phase), vector_op_cost(kind, 2 * n, phase)
    assert two.flops == 2 * one.flops and two.hbm_bytes == 2 * one.hbm_bytes


def test_collective_event_locality_check():
    CollectiveEvent(CollectiveKind.ALLGATHER, 10, 8, 4)
    with pytest.raises(ValueError):
        CollectiveEvent(CollectiveKind.ALLGATHER, 10, 8, 3)
    with pytest.raises(ValueError):
        CollectiveEvent(CollectiveKind.ALLGATHER, 10, 4, 8)


def _tp_volume(spec, pconf, phase=Phase.FWD):
    return sum(ev.volume for ev in block_cost(spec, pconf, phase).events)


def test_1d_volume_constant_in_nt():
    gpt = builtin_spec("gpt3-1t")
    vols = {nt: _tp_volume(gpt, ParallelConfig("tp1d", nt, 1, 1, 1, 1, 1)) for nt in (2, 4, 8, 16)}
    assert len(set(vols.values())) == 1
    assert vols[2] == 4 * 2 * gpt.l * gpt.e


def test_2d_degenerates_to_1d():
    gpt = builtin_spec("gpt3-1t")
    one = block_cost(gpt, ParallelConfig("tp1d", 1, 1, 1, 1, 1, 1))
    two = block_cost(gpt, ParallelConfig("tp2d", 1, 1, 1, 1, 1, 1))
    assert one.total.flops == two.total.flops
    assert one.total.hbm_bytes == two.total.hbm_bytes
    assert _tp_volume(gpt, ParallelConfig("tp2d", 1, 1, 1, 1, 1, 1)) == 4 * 2 * gpt.l * gpt.e


def test_2d_volume_scaling():
    gpt = builtin_spec("gpt3-1t")

    def split(n1, n2):
        events = block_cost(gpt, ParallelConfig("tp2d", n1, n2, 1, 1, 1, 1)).events
        agrs = sum(ev.volume for ev in events if ev.op not in ("k_proj", "v_proj"))
        kv = sum(ev.volume for ev in events if ev.op in ("k_proj", "v_proj"))
        return agrs, kv

    a1, kv1 = split(4, 2)
    a2, kv2 = split(4, 4)
    a3, kv3 = split(8, 4)
    assert a2 == a1 / 2 and kv2 == kv1
    assert kv3 == kv2 / 2 and a3 == a2


def test_summa_v2_volume():
    gpt = builtin_spec("gpt3-1t")
    pconf = ParallelConfig("tp2d_summa", 8, 4, 1, 1, 1, 1)
    fc1 = [ev for ev in block_cost(gpt, pconf).events if ev.op == "fc1"]
    expected = 2 * (2048 * 25600 / 4 + 25600 * 102400 / 8)
    assert sum(ev.volume for ev in fc1) == expected
    assert expected == pytest.approx(6.81e8, rel=2e-3)
    assert {ev.kind for ev in fc1} == {CollectiveKind.BROADCAST}


def test_summa_backward_uses_broadcast_and_reduce():
    gpt = builtin_spec("gpt3-1t")
    pconf = ParallelConfig("tp2d_summa", 8, 4, 1, 1, 1, 1)
    kinds = [ev.kind for ev in block_cost(gpt, pconf, Phase.BWD).events if ev.op == "fc2"]
    assert kinds.count(CollectiveKind.BROADCAST) == 2 and kinds.count(CollectiveKind.REDUCE) == 2


def test_backward_conjugates_1d():
    gpt = builtin_spec("gpt3-1t")
    pconf = ParallelConfig("tp1d", 8, 1, 1, 1, 1, 1)
    fwd = [ev.kind for ev in block_cost(gpt, pconf).events]
    bwd = [ev.kind for ev in block_cost(gpt, pconf, Phase.BWD).events]
    swap = {CollectiveKind.ALLGATHER: CollectiveKind.REDUCESCATTER,
            CollectiveKind.REDUCESCATTER: CollectiveKind.ALLGATHER}
    assert bwd == [swap[k] for k in fwd]


@given(st.sampled_from([(1, 1), (2, 1), (2, 2), (4, 2), (1, 4), (4, 4)]),
       st.integers(1, 4))
@settings(max_examples=30, deadline=None)
def test_summa_exceeds_2d_volume(grid, b_m):
    spec = TransformerSpec(l=64, e=64, f=256, h=8, d=2)
    n1, n2 = grid
    v2d = _tp_volume(spec, ParallelConfig("tp2d", n1, n2, 1, 1, b_m, 1))
    vs = _tp_volume(spec, ParallelConfig("tp2d_summa", n1, n2, 1, 1, b_m, 1))
    assert vs > v2d


def test_degree_one_flops_backward_twice_forward():
    spec = TransformerSpec(l=32, e=32, f=128, h=4, d=2)
    pconf = ParallelConfig("tp1d", 1, 1, 1, 1, 1, 1)
    fwd, bwd = block_cost(spec, pconf), block_cost(spec, pconf, Phase.BWD)
    gemms = [op.gemm for op in block_ops(spec, pconf) if op.gemm]
    gemm_fwd = sum(matmul_cost(*g).tensor_flops for g in gemms)
    attn_fwd = fused_attention_cost(1, 4, 32, 32, 8).tensor_flops
    assert fwd.total.tensor_flops == gemm_fwd + attn_fwd
    assert bwd.total.tensor_flops == 2 * gemm_fwd + 3 * attn_fwd


def test_partitioned_activation_total_invariant():
    """Sharded (non-replicated) tensors sum to the same bytes across a TP group."""
    spec = TransformerSpec(l=64, e=64, f=256, h=8, d=2)

    def sharded(strategy, n1, n2):
        pconf = ParallelConfig(strategy, n1, n2, 1, 1, 1, 1)
        return {t.name: t.nbytes for op in block_ops(spec, pconf) for t in op.saved
                if t.replicas == 1}

    for strategy in ("tp1d", "tp2d", "tp2d_summa"):
        ref = sharded(strategy, 1, 1)
        for n1, n2 in [(2, 1), (8, 1), (2, 2), (4, 2)]:
            if strategy == "tp1d" and n2 > 1:
                continue
            local = sharded(strategy, n1, n2)
            assert local, "expected partitioned activations"
            assert sum(local.values()) * n1 * n2 == sum(ref[name] for name in local)


def test_dp_pp_events():
    gpt = builtin_spec("gpt3-1t")
    assert dp_and_pp_events(gpt, ParallelConfig("tp1d", 8, 1, 1, 1, 1, 4)) == []
    pconf = ParallelConfig("tp1d", 8, 1, 64, 32, 1, 128)
    events = dp_and_pp_events(gpt, pconf)
    p2p = [ev for ev in events if ev.kind is CollectiveKind.P2P]
    assert p2p[0].volume == pytest.approx(1.678e9, rel=1e-3)
    dp = [ev for ev in events if ev.kind is not CollectiveKind.P2P]
    assert {ev.group_size for ev in dp} == {32}
    assert all(ev.volume == 2 * local_param_count(gpt, pconf) for ev in dp)
    two = ParallelConfig("tp2d", 4, 2, 64, 1, 1, 4096)
    assert {ev.group_size for ev in dp_and_pp_events(gpt, two)
            if ev.kind is not CollectiveKind.P2P} == {2}


def test_memory_single_gpu():
    spec = TransformerSpec(l=32, e=32, f=128, h=4, d=2)
    fp = memory_footprint(spec, ParallelConfig("tp1d", 1, 1, 1, 1, 1, 1))
    p = param_count(spec)
    assert fp.weights == 2 * p and fp.gradients == 2 * p and fp.optimizer == 12 * p
    assert fp.total == pytest.approx(fp.weights + fp.gradients + fp.optimizer
                                     + fp.activations + fp.masks)


def test_memory_reserve_added(b200):
    spec = TransformerSpec(l=32, e=32, f=128, h=4, d=2)
    import dataclasses
    sys = dataclasses.replace(b200, hbm_reserve=3e9)
    pconf = ParallelConfig("tp1d", 1, 1, 1, 1, 1, 1)
    assert memory_footprint(spec, pconf, sys).total == pytest.approx(
        memory_footprint(spec, pconf).total + 3e9)


def test_memory_in_flight_factor():
    gpt = builtin_spec("gpt3-1t")
    a = memory_footprint(gpt, ParallelConfig("tp1d", 8, 1, 64, 32, 1, 128))
    b = memory_footprint(gpt, ParallelConfig("tp1d", 8, 1, 64, 32, 1, 64))
    c = memory_footprint(gpt, ParallelConfig("tp1d", 8, 1, 64, 32, 1, 32))
    # 64 microbatches retained whenever m >= n_p
    assert a.activations == b.activations == 2 * c.activations


@given(st.sampled_from([1, 2, 4, 8, 16]), st.sampled_from([1, 2, 4, 8, 16, 32]))
@settings(max_examples=25, deadline=None)
def test_memory_monotone(n_p, m):
    spec = TransformerSpec(l=64, e=64, f=256, h=8, d=16)
    fp = memory_footprint(spec, ParallelConfig("tp1d", 2, 1, n_p, 1, 1, m))
    if n_p < 16:
        deeper = memory_footprint(spec, ParallelConfig("tp1d", 2, 1, 2 * n_p, 1, 1, m))
        assert deeper.weights <= fp.weights
    more = memory_footprint(spec, ParallelConfig("tp1d", 2, 1, n_p, 1, 1, 2 * m))
    assert more.activations >= fp.activations


def test_memory_footprint_total_field():
    fp = MemoryFootprint(1, 2, 3, 4, 5, 6)
    assert fp.total == 21
