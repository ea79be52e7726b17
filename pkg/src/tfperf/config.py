"""Parallel configuration: one point of the 4D design space."""
from __future__ import annotations

import enum
from dataclasses import dataclass


class Strategy(str, enum.Enum):
    TP1D = "tp1d"
    TP2D = "tp2d"
    TP2D_SUMMA = "tp2d_summa"

    @classmethod
    def parse(cls, value) -> "Strategy":
        if isinstance(value, Strategy):
            return value
        key = str(value).strip().lower().replace("-", "_")
        aliases = {"summa": "tp2d_summa", "1d": "tp1d", "2d": "tp2d"}
        key = aliases.get(key, key)
        for member in cls:
            if member.value == key or member.name.lower() == key:
                return member
        raise ValueError(f"unknown TP strategy {value!r}; expected one of "
                         f"{[m.value for m in cls]}")

    @property
    def is_2d(self) -> bool:
        return self is not Strategy.TP1D


@dataclass(frozen=True)
class ParallelConfig:
    """GPU decomposition ``n = n1 * n2 * n_p * n_d`` plus microbatching.

    ``nvs_assign`` holds how many GPUs of each group (tp1, tp2, pp, dp)
    share one NVS domain. ``n_b`` is the SUMMA panel count and is 1 for the
    other strategies.
    """

    strategy: Strategy
    n1: int
    n2: int
    n_p: int
    n_d: int
    b_m: int
    m: int
    nvs_assign: tuple[int, int, int, int] = (1, 1, 1, 1)
    n_b: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy.parse(self.strategy))
        object.__setattr__(self, "nvs_assign", tuple(int(a) for a in self.nvs_assign))

    @classmethod
    def from_batch(cls, strategy, n1, n2, n_p, n_d, b_m, batch,
                   nvs_assign=(1, 1, 1, 1), n_b=1) -> "ParallelConfig":
        """Build a config deriving the microbatch count from the global batch."""
        if n_d < 1 or b_m < 1 or batch % (n_d * b_m):
            raise ValueError(f"b_m={b_m} must divide the local batch "
                             f"b/n_d = {batch}/{n_d}")
        return cls(strategy, n1, n2, n_p, n_d, b_m, batch // (n_d * b_m),
                   tuple(nvs_assign), n_b)

    @property
    def n(self) -> int:
        return self.n1 * self.n2 * self.n_p * self.n_d

    @property
    def n_t(self) -> int:
        return self.n1 * self.n2

    @property
    def batch(self) -> int:
        return self.m * self.n_d * self.b_m

    @property
    def dp_group(self) -> int:
        # 2D variants fold the n2 weight-gradient reduction into the DP collectives
        return self.n_d * self.n2 if self.strategy.is_2d else self.n_d

    @property
    def dp_nvs(self) -> int:
        a1, a2, ap, ad = self.nvs_assign
        return ad * a2 if self.strategy.is_2d else ad

    def sort_key(self) -> tuple:
        """Tie-break order for equal-time configs (smallest wins)."""
        return (self.n_p, self.n2, self.n1, self.n_d, self.b_m,
                self.nvs_assign, self.n_b)

    def as_dict(self) -> dict:
        return {
            "strategy": self.strategy.value,
            "n1": self.n1, "n2": self.n2, "n_p": self.n_p, "n_d": self.n_d,
            "b_m": self.b_m, "m": self.m,
            "nvs_assign": list(self.nvs_assign), "n_b": self.n_b,
        }
