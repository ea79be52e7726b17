"""GPU and two-tier network descriptions."""
from __future__ import annotations

import re
from dataclasses import MISSING, asdict, dataclass, fields, replace
from pathlib import Path

import yaml

GB = 1e9
TFLOPS = 1e12


@dataclass(frozen=True)
class SystemSpec:
    """Per-GPU rates plus NVS (fast) and IB (slow) network parameters.

    All values are SI: bytes, bytes/s, FLOP/s, seconds. Bandwidths are
    nominal; ``bw_efficiency`` derates the network links and
    ``hbm_efficiency`` the HBM bandwidth.
    """

    tensor_flops: float
    vector_flops: float
    flops_latency: float
    hbm_bw: float
    hbm_capacity: float
    nvs_bw: float
    nvs_latency: float
    ib_bw_per_nic: float
    ib_latency: float
    n_nvs: int
    n_nic: int
    bw_efficiency: float = 0.70
    hbm_efficiency: float = 1.0
    hbm_reserve: float = 0.0
    name: str = "custom"

    def __post_init__(self):
        for f in ("tensor_flops", "vector_flops", "hbm_bw", "hbm_capacity",
                  "nvs_bw", "ib_bw_per_nic"):
            if not getattr(self, f) > 0:
                raise ValueError(f"{f} must be > 0, got {getattr(self, f)!r}")
        for f in ("flops_latency", "nvs_latency", "ib_latency", "hbm_reserve"):
            if getattr(self, f) < 0:
                raise ValueError(f"{f} must be >= 0, got {getattr(self, f)!r}")
        for f in ("bw_efficiency", "hbm_efficiency"):
            if not 0 < getattr(self, f) <= 1:
                raise ValueError(f"{f} must lie in (0, 1], got {getattr(self, f)!r}")
        for f in ("n_nvs", "n_nic"):
            value = getattr(self, f)
            if isinstance(value, bool) or int(value) != value or value < 1:
                raise ValueError(f"{f} must be an integer >= 1, got {value!r}")
            object.__setattr__(self, f, int(value))

    @property
    def nvs_bw_eff(self) -> float:
        return self.nvs_bw * self.bw_efficiency

    @property
    def ib_bw_eff(self) -> float:
        return self.ib_bw_per_nic * self.bw_efficiency

    @property
    def hbm_bw_eff(self) -> float:
        return self.hbm_bw * self.hbm_efficiency

    def with_nvs(self, n_nvs: int) -> "SystemSpec":
        """Same GPU with a different NVS domain size (one NIC per GPU)."""
        return replace(self, n_nvs=n_nvs, n_nic=n_nvs, name=_rename(self.name, n_nvs))

    def as_dict(self) -> dict:
        return asdict(self)


def _rename(name: str, n_nvs: int) -> str:
    base = name.split(":")[0]
    return f"{base}:nvs{n_nvs}"


# Hardware table of the three GPU generations (FP16 peaks, one-directional NVS).
GPU_PRESETS = {
    "a100": dict(tensor_flops=312 * TFLOPS, vector_flops=78 * TFLOPS, flops_latency=2e-5,
                 hbm_bw=1555 * GB, hbm_capacity=80 * GB, nvs_bw=300 * GB, nvs_latency=2.5e-6,
                 ib_bw_per_nic=25 * GB, ib_latency=5e-6),
    "h200": dict(tensor_flops=990 * TFLOPS, vector_flops=134 * TFLOPS, flops_latency=2e-5,
                 hbm_bw=4800 * GB, hbm_capacity=141 * GB, nvs_bw=450 * GB, nvs_latency=2.5e-6,
                 ib_bw_per_nic=50 * GB, ib_latency=5e-6),
    "b200": dict(tensor_flops=2500 * TFLOPS, vector_flops=339 * TFLOPS, flops_latency=2e-5,
                 hbm_bw=8000 * GB, hbm_capacity=192 * GB, nvs_bw=900 * GB, nvs_latency=2.5e-6,
                 ib_bw_per_nic=100 * GB, ib_latency=5e-6),
}


def builtin_system(gpu: str, n_nvs: int = 8) -> SystemSpec:
    key = gpu.strip().lower()
    if key not in GPU_PRESETS:
        raise ValueError(f"unknown GPU preset {gpu!r}; available: {sorted(GPU_PRESETS)}")
    if n_nvs < 1 or n_nvs & (n_nvs - 1):
        raise ValueError(f"NVS domain size must be a power of two >= 1, got {n_nvs}")
    return SystemSpec(**GPU_PRESETS[key], n_nvs=n_nvs, n_nic=n_nvs, bw_efficiency=0.70,
                      name=f"{key}:nvs{n_nvs}")


_UNITS = {
    "": 1.0, "k": 1e3, "m": 1e6, "g": 1e9, "t": 1e12, "p": 1e15,
}
_TIME_UNITS = {"s": 1.0, "ms": 1e-3, "us": 1e-6, "ns": 1e-9}
_QUANTITY = re.compile(r"^\s*([-+0-9.eE]+)\s*([a-zA-Z/]*)\s*$")


def parse_quantity(value, field_name: str = "value") -> float:
    """Numbers pass through; strings like ``"192 GB"``, ``"900 GB/s"``,
    ``"2.5 us"`` or ``"312 TFLOP/s"`` are converted to SI base units."""
    if isinstance(value, bool):
        raise ValueError(f"{field_name}: expected a number, got {value!r}")
    if isinstance(value, (int, float)):
        return float(value)
    match = _QUANTITY.match(str(value))
    if not match:
        raise ValueError(f"{field_name}: cannot parse quantity {value!r}")
    number, unit = float(match.group(1)), match.group(2)
    if not unit:
        return number
    if unit in _TIME_UNITS:
        return number * _TIME_UNITS[unit]
    stripped = re.sub(r"(?i)(flop/s|flops|b/s|bps|b)$", "", unit)
    if stripped == unit:
        raise ValueError(f"{field_name}: unknown unit {unit!r}")
    try:
        return number * _UNITS[stripped.lower()]
    except KeyError:
        raise ValueError(f"{field_name}: unknown unit prefix in {unit!r}") from None


_FIELDS = {f.name for f in fields(SystemSpec)}
_REQUIRED = {f.name for f in fields(SystemSpec) if f.default is MISSING}


def system_from_dict(data: dict) -> SystemSpec:
    data = dict(data)
    unknown = set(data) - _FIELDS
    if unknown:
        raise ValueError(f"unknown system fields {sorted(unknown)}")
    missing = _REQUIRED - set(data)
    if missing:
        raise ValueError(f"missing system fields {sorted(missing)}")
    out = {}
    for key, value in data.items():
        if key == "name":
            out[key] = str(value)
        elif key in ("n_nvs", "n_nic"):
            number = parse_quantity(value, key)
            if number != int(number):
                raise ValueError(f"{key} must be an integer >= 1, got {value!r}")
            out[key] = int(number)
        else:
            out[key] = parse_quantity(value, key)
    return SystemSpec(**out)


def load_system(path) -> SystemSpec:
    """Read a YAML/JSON system file; invariant violations name the field."""
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ValueError(f"{path}: parse error: {exc}") from None
    if not isinstance(data, dict):
        raise ValueError(f"{path}: expected a mapping of system fields")
    data = data.get("system", data)
    try:
        return system_from_dict(data)
    except ValueError as exc:
        raise ValueError(f"{path}: {exc}") from None


def save_system(sys: SystemSpec, path) -> None:
    Path(path).write_text(yaml.safe_dump(sys.as_dict(), sort_keys=False))


def resolve_system(value: str) -> SystemSpec:
    """Accept ``b200``, ``b200:nvs8``, ``preset:b200:nvs64`` or a file path."""
    text = value.strip()
    if Path(text).exists():
        return load_system(text)
    parts = [p for p in text.lower().split(":") if p]
    if parts and parts[0] == "preset":
        parts = parts[1:]
    if parts and parts[0] in GPU_PRESETS:
        n_nvs = 8
        if len(parts) > 1:
            m = re.fullmatch(r"nvs(\d+)", parts[1])
            if not m or len(parts) > 2:
                raise ValueError(f"bad system preset {value!r}; use e.g. b200:nvs8")
            n_nvs = int(m.group(1))
        return builtin_system(parts[0], n_nvs)
    raise ValueError(f"{value!r} is neither a system preset "
                     f"{sorted(GPU_PRESETS)}[:nvsN] nor an existing file")
