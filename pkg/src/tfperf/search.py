"""Exhaustive search over 4D parallel configurations."""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass, field
from typing import Iterator, Optional

from .arch import TransformerSpec, check_divisibility
from .config import ParallelConfig, Strategy
from .counting import Phase, memory_footprint
from .hwspec import SystemSpec
from .timemodel import (Estimate, StageTime, assemble, block_phase_time,
                        dp_pp_times, iteration_estimate)

MAX_PANEL_CANDIDATES = 64


class NoFeasibleConfigError(RuntimeError):
    """Every configuration exceeds HBM capacity (or none passes divisibility)."""

    code = "NO_FEASIBLE_CONFIG"

    def __init__(self, message: str, space_size: int = 0):
        super().__init__(message)
        self.space_size = space_size


def divisors(x: int) -> list[int]:
    small, large = [], []
    for i in range(1, math.isqrt(x) + 1):
        if x % i == 0:
            small.append(i)
            if i != x // i:
                large.append(x // i)
    return small + large[::-1]


def panel_candidates(spec: TransformerSpec) -> list[int]:
    """Panel counts dividing every SUMMA inner dimension, smallest first."""
    return divisors(math.gcd(spec.e, spec.f))[:MAX_PANEL_CANDIDATES]


def nvs_assignments(sizes: tuple[int, ...], n_nvs: int) -> list[tuple[int, ...]]:
    """All (a_1, a_2, a_p, a_d) with a_i | n_i and prod(a_i) <= n_nvs."""
    out: list[tuple[int, ...]] = [()]
    for size in sizes:
        out = [prefix + (a,) for prefix in out for a in divisors(size)
               if math.prod(prefix) * a <= n_nvs]
    return out


def _factor_grid(n: int, strategy: Strategy) -> Iterator[tuple[int, int, int, int]]:
    for n1 in divisors(n):
        rest = n // n1
        for n2 in (divisors(rest) if strategy.is_2d else [1]):
            rest2 = rest // n2
            for n_p in divisors(rest2):
                yield n1, n2, n_p, rest2 // n_p


def _shape_configs(n: int, b: int, spec: TransformerSpec,
                   strategy: Strategy) -> Iterator[ParallelConfig]:
    """Configs with default NVS assignment and n_b, one per (degrees, b_m)."""
    for n1, n2, n_p, n_d in _factor_grid(n, strategy):
        if b % n_d:
            continue
        probe = ParallelConfig(strategy, n1, n2, n_p, n_d, 1, b // n_d)
        if check_divisibility(spec, probe):
            continue
        for b_m in divisors(b // n_d):
            yield ParallelConfig.from_batch(strategy, n1, n2, n_p, n_d, b_m, b)


def enumerate_configs(n: int, b: int, spec: TransformerSpec, strategy,
                      sys: SystemSpec) -> Iterator[ParallelConfig]:
    """Every valid configuration of n GPUs at global batch b."""
    if n < 1 or b < 1:
        raise ValueError("n and b must be >= 1")
    strategy = Strategy.parse(strategy)
    panels = panel_candidates(spec) if strategy is Strategy.TP2D_SUMMA else [1]
    for base in _shape_configs(n, b, spec, strategy):
        sizes = (base.n1, base.n2, base.n_p, base.n_d)
        for assign in nvs_assignments(sizes, sys.n_nvs):
            for n_b in panels:
                yield ParallelConfig(strategy, *sizes, base.b_m, base.m, assign, n_b)


def validate_config(pconf: ParallelConfig, spec: TransformerSpec, sys: SystemSpec,
                    n: Optional[int] = None, b: Optional[int] = None) -> list[str]:
    errors = check_divisibility(spec, pconf)
    sizes = (pconf.n1, pconf.n2, pconf.n_p, pconf.n_d)
    for label, a, size in zip(("a_1", "a_2", "a_p", "a_d"), pconf.nvs_assign, sizes):
        if a < 1 or size % a:
            errors.append(f"{label}={a} does not divide its group size {size}")
    if math.prod(pconf.nvs_assign) > sys.n_nvs:
        errors.append(f"NVS assignment {pconf.nvs_assign} uses more than "
                      f"n_nvs={sys.n_nvs} GPUs per domain")
    if n is not None and pconf.n != n:
        errors.append(f"n1*n2*n_p*n_d={pconf.n} does not equal n={n}")
    if b is not None and pconf.batch != b:
        errors.append(f"n_d*b_m*m={pconf.batch} does not equal batch b={b}")
    return errors


def evaluate_config(pconf: ParallelConfig, spec: TransformerSpec,
                    sys: SystemSpec) -> Estimate:
    errors = validate_config(pconf, spec, sys)
    if errors:
        raise ValueError("invalid parallel config: " + "; ".join(errors))
    return iteration_estimate(spec, pconf, sys)


@dataclass
class SearchResult:
    best: Estimate
    ranked: list[Estimate] = field(default_factory=list)
    space_size: int = 0
    infeasible_count: int = 0


def _rank(est: Estimate) -> tuple:
    return (est.total, est.config.sort_key())


class _StageCache:
    """Per-block stage times keyed on everything they depend on."""

    def __init__(self, spec: TransformerSpec, sys: SystemSpec):
        self.spec, self.sys = spec, sys
        self._cache: dict[tuple, tuple[StageTime, StageTime]] = {}

    def get(self, pconf: ParallelConfig) -> tuple[StageTime, StageTime]:
        a1, a2, _, _ = pconf.nvs_assign
        key = (pconf.n1, pconf.n2, pconf.b_m, a1, a2, pconf.n_b)
        hit = self._cache.get(key)
        if hit is None:
            hit = (block_phase_time(self.spec, pconf, self.sys, Phase.FWD),
                   block_phase_time(self.spec, pconf, self.sys, Phase.BWD))
            self._cache[key] = hit
        return hit


def optimize(n: int, b: int, spec: TransformerSpec, strategy, sys: SystemSpec,
             top_k: int = 1) -> SearchResult:
    """Minimum-time feasible configuration; ties go to the smallest sort_key."""
    strategy = Strategy.parse(strategy)
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    panels = panel_candidates(spec) if strategy is Strategy.TP2D_SUMMA else [1]
    stages = _StageCache(spec, sys)
    dp_cache: dict[tuple, tuple[float, float, float]] = {}
    heap: list[tuple] = []  # max-heap of the top_k via negated rank
    space = infeasible = 0
    for base in _shape_configs(n, b, spec, strategy):
        sizes = (base.n1, base.n2, base.n_p, base.n_d)
        assigns = nvs_assignments(sizes, sys.n_nvs)
        # memory does not depend on NVS placement or panel count
        footprint = memory_footprint(spec, base, sys)
        if footprint.total > sys.hbm_capacity:
            count = len(assigns) * len(panels)
            space += count
            infeasible += count
            continue
        blocks = spec.d // base.n_p
        for assign in assigns:
            for n_b in panels:
                space += 1
                pconf = ParallelConfig(strategy, *sizes, base.b_m, base.m, assign, n_b)
                fwd, bwd = stages.get(pconf)
                dkey = (sizes, base.b_m, assign[2:], assign[1] if strategy.is_2d else 1)
                comm = dp_cache.get(dkey)
                if comm is None:
                    comm = dp_cache[dkey] = dp_pp_times(spec, pconf, sys)
                est = assemble(pconf, fwd, bwd, blocks, *comm, footprint, sys)
                entry = (-est.total, _Neg(pconf.sort_key()), est)
                if len(heap) < top_k:
                    heapq.heappush(heap, entry)
                elif _rank(est) < _rank(heap[0][-1]):
                    heapq.heapreplace(heap, entry)
    if not heap:
        raise NoFeasibleConfigError(
            f"no feasible configuration for n={n}, b={b}, strategy={strategy.value} "
            f"on {sys.name}: {space} configurations evaluated, {infeasible} exceed "
            f"HBM capacity {sys.hbm_capacity / 1e9:g} GB", space)
    ranked = sorted((item[-1] for item in heap), key=_rank)
    return SearchResult(ranked[0], ranked, space, infeasible)


class _Neg:
    """Reverses ordering of a sort key so the heap root is the worst entry."""

    __slots__ = ("key",)

    def __init__(self, key):
        self.key = key

    def __lt__(self, other):
        return self.key > other.key

    def __eq__(self, other):
        return self.key == other.key


def optimize_placement(pconf: ParallelConfig, spec: TransformerSpec,
                       sys: SystemSpec) -> Estimate:
    """Best NVS assignment (and SUMMA panel count) for fixed degrees and b_m."""
    errors = check_divisibility(spec, ParallelConfig(pconf.strategy, pconf.n1, pconf.n2,
                                                     pconf.n_p, pconf.n_d, pconf.b_m, pconf.m))
    if errors:
        raise ValueError("invalid parallel config: " + "; ".join(errors))
    sizes = (pconf.n1, pconf.n2, pconf.n_p, pconf.n_d)
    panels = panel_candidates(spec) if pconf.strategy is Strategy.TP2D_SUMMA else [1]
    best = None
    for assign in nvs_assignments(sizes, sys.n_nvs):
        for n_b in panels:
            cand = ParallelConfig(pconf.strategy, *sizes, pconf.b_m, pconf.m, assign, n_b)
            est = iteration_estimate(spec, cand, sys)
            if best is None or _rank(est) < _rank(best):
                best = est
    return best
