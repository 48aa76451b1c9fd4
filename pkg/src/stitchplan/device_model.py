"""Analytical machine model shared by the latency- and delta-evaluators.

Kernel latency is ``wave_count * warp_latency``: the number of warp waves the
device must process times the cycles one warp spends in the kernel.
"""

from __future__ import annotations

import configparser
import math
import os
from dataclasses import dataclass, field, fields, replace
from importlib import resources
from pathlib import Path
from typing import Mapping

import numpy as np

from .errors import ConfigError, InfeasibleKernel
from .graph_ir import OpClass, OpKind, kind_class

CONFIG_ENV = "STITCHPLAN_CONFIG"

TRANSITIONS = ("global_to_register", "global_to_shared", "shared_to_register")


@dataclass(frozen=True)
class DeviceSpec:
    sm_count: int = 80
    max_warps_per_sm: int = 64
    max_threads_per_block: int = 1024
    warp_size: int = 32
    shared_mem_per_sm: int = 98304
    shared_mem_per_block_limit: int = 49152
    registers_per_sm: int = 65536
    max_blocks_per_sm: int = 32
    global_mem_bandwidth: float = 650.0

    def __post_init__(self):
        for f in fields(self):
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"device field {f.name} must be positive")
        if self.max_threads_per_block % self.warp_size:
            raise ConfigError("warp_size must divide max_threads_per_block")


# Pseudo instruction kinds emitted by the planner besides the op kinds.
PSEUDO_KINDS = (
    "reduce_step",
    "shared_load",
    "shared_store",
    "shuffle",
    "global_load",
    "global_store",
    "barrier",
    "index",
)


@dataclass(frozen=True)
class CpiTable:
    light: float = 4.0
    expensive: float = 32.0
    reduce_step: float = 8.0
    shared_access: float = 30.0
    shuffle: float = 5.0
    global_access: float = 40.0
    barrier: float = 20.0
    index: float = 4.0
    overrides: Mapping[str, float] = field(default_factory=dict)

    def __post_init__(self):
        for f in fields(self):
            if f.name == "overrides":
                continue
            if getattr(self, f.name) <= 0:
                raise ConfigError(f"CPI {f.name} must be positive")
        for k, v in self.overrides.items():
            if v <= 0:
                raise ConfigError(f"CPI override {k} must be positive")

    def __hash__(self) -> int:
        return hash(tuple((f.name, getattr(self, f.name)) for f in fields(self) if f.name != "overrides")
                    + tuple(sorted(self.overrides.items())))

    def cycles(self, kind: str) -> float:
        if kind in self.overrides:
            return self.overrides[kind]
        if kind in ("shared_load", "shared_store"):
            return self.shared_access
        if kind in ("global_load", "global_store"):
            return self.global_access
        if kind in ("reduce_step", "shuffle", "barrier", "index"):
            return getattr(self, kind)
        try:
            op = OpKind(kind)
        except ValueError:
            raise ConfigError(f"no CPI entry for instruction kind {kind!r}") from None
        cls = kind_class(op)
        if cls is OpClass.LIGHT or cls is OpClass.SHAPE:
            return self.light
        if cls is OpClass.EXPENSIVE:
            return self.expensive
        if cls is OpClass.REDUCTION:
            return self.reduce_step
        raise ConfigError(f"no CPI entry for instruction kind {kind!r}")


@dataclass(frozen=True)
class MemLatencyModel:
    """Piecewise-linear bytes -> cycles curves, one per memory-tier transition."""

    curves: Mapping[str, tuple[tuple[float, ...], tuple[float, ...]]]

    def __post_init__(self):
        for name, (xs, ys) in self.curves.items():
            if len(xs) != len(ys) or len(xs) < 2:
                raise ConfigError(f"{name}: need at least two breakpoints")
            if xs[0] != 0 or ys[0] != 0:
                raise ConfigError(f"{name}: first breakpoint must be 0:0")
            if any(b <= a for a, b in zip(xs, xs[1:])):
                raise ConfigError(f"{name}: breakpoints must be strictly increasing")
            if any(b < a for a, b in zip(ys, ys[1:])):
                raise ConfigError(f"{name}: latency must be non-decreasing")

    def __hash__(self) -> int:
        return hash(tuple(sorted((k, tuple(v[0]), tuple(v[1])) for k, v in self.curves.items())))


def default_mem_model() -> MemLatencyModel:
    return MemLatencyModel(
        {
            "global_to_register": ((0, 1024, 65536, 1048576), (0, 200, 6000, 60000)),
            "global_to_shared": ((0, 1024, 65536, 1048576), (0, 150, 4500, 45000)),
            "shared_to_register": ((0, 1024, 65536, 1048576), (0, 20, 600, 6000)),
        }
    )


@dataclass(frozen=True)
class LaunchDims:
    grid: int
    block: int

    def __post_init__(self):
        if self.grid < 1 or self.block < 1:
            raise ConfigError(f"launch dims must be positive, got grid={self.grid} block={self.block}")

    def check(self, dev: DeviceSpec) -> None:
        if self.block > dev.max_threads_per_block or self.block % dev.warp_size:
            raise InfeasibleKernel(f"block {self.block} invalid for warp {dev.warp_size}, "
                                   f"max {dev.max_threads_per_block}")

    def threads(self) -> int:
        return self.grid * self.block

    def warps(self, dev: DeviceSpec) -> int:
        return self.grid * (self.block // dev.warp_size)


@dataclass(frozen=True)
class CostModels:
    """Everything besides the device that the two evaluators read."""

    cpi: CpiTable = field(default_factory=CpiTable)
    mem: MemLatencyModel = field(default_factory=default_mem_model)
    context_switch_cycles: float = 7500.0
    delta_fixed_registers: int = 16
    delta_block: int = 256
    max_pattern_size: int = 64
    register_overhead: int = 8
    max_groupings: int = 64
    block_sizes: tuple[int, ...] = (64, 128, 256, 512, 1024)
    grid_cap_factor: int = 8
    fractional_waves: bool = True


def occupancy(ld: LaunchDims, regs_per_thread: int, shmem_per_block: int, dev: DeviceSpec) -> float:
    """Fraction of warp slots kept busy under the binding resource limit."""
    if shmem_per_block > dev.shared_mem_per_block_limit:
        raise InfeasibleKernel(
            f"shared memory request {shmem_per_block} exceeds per-block limit {dev.shared_mem_per_block_limit}"
        )
    if regs_per_thread < 1:
        raise ConfigError("regs_per_thread must be >= 1")
    ld.check(dev)
    blocks = min(
        dev.max_blocks_per_sm,
        dev.shared_mem_per_sm // max(shmem_per_block, 1),
        dev.registers_per_sm // (regs_per_thread * ld.block),
        (dev.max_warps_per_sm * dev.warp_size) // ld.block,
    )
    warps = blocks * (ld.block // dev.warp_size)
    occ = warps / dev.max_warps_per_sm
    return min(1.0, max(occ, 1.0 / dev.max_warps_per_sm))


def wave_count(n_warps: float, occ: float, dev: DeviceSpec, ceil: bool = False) -> float:
    if not 0.0 < occ <= 1.0:
        raise ConfigError(f"occupancy must be in (0, 1], got {occ}")
    waves = n_warps / (occ * dev.sm_count * dev.max_warps_per_sm)
    return float(math.ceil(waves)) if ceil else waves


def warp_latency(instr_histogram: Mapping[str, float], cpi: CpiTable) -> float:
    return float(sum(count * cpi.cycles(kind) for kind, count in sorted(instr_histogram.items())))


def mem_transfer_saving(nbytes: float, transition: str, m: MemLatencyModel) -> float:
    """Cycles saved by moving ``nbytes`` of traffic across ``transition``.

    Linear interpolation between breakpoints, extending the last segment's slope.
    """
    if transition not in m.curves:
        raise ConfigError(f"unsupported transition {transition!r}")
    if nbytes < 0:
        raise ConfigError("byte count must be non-negative")
    xs, ys = m.curves[transition]
    if nbytes <= xs[-1]:
        return float(np.interp(nbytes, xs, ys))
    slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    return float(ys[-1] + slope * (nbytes - xs[-1]))


def kernel_latency(n_warps: float, histogram: Mapping[str, float], ld: LaunchDims, regs: int, shmem: int,
                   dev: DeviceSpec, models: CostModels) -> float:
    occ = occupancy(ld, regs, shmem, dev)
    return wave_count(n_warps, occ, dev, ceil=not models.fractional_waves) * warp_latency(histogram, models.cpi)


# -- configuration file -------------------------------------------------------------------------


def _parse_curve(text: str, where: str) -> tuple[tuple[float, ...], tuple[float, ...]]:
    xs, ys = [], []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            x, y = item.split(":")
            xs.append(float(x))
            ys.append(float(y))
        except ValueError:
            raise ConfigError(f"{where}: bad breakpoint {item!r}, expected bytes:cycles") from None
    return tuple(xs), tuple(ys)


def default_config_path() -> Path:
    env = os.environ.get(CONFIG_ENV)
    if env:
        return Path(env)
    return Path(str(resources.files("stitchplan").joinpath("data/default_device.ini")))


def load_config(path: str | os.PathLike | None = None) -> tuple[DeviceSpec, CostModels]:
    """Load a device/cost config (INI). ``None`` uses ``$STITCHPLAN_CONFIG`` or the bundled default."""
    path = Path(path) if path is not None else default_config_path()
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    cp = configparser.ConfigParser(delimiters=("=",), inline_comment_prefixes=("#",))
    try:
        cp.read_string(path.read_text())
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    dev = DeviceSpec()
    models = CostModels()
    try:
        if cp.has_section("device"):
            dev_kw = {}
            for f in fields(DeviceSpec):
                if f.name in cp["device"]:
                    raw = cp["device"][f.name]
                    dev_kw[f.name] = float(raw) if f.name == "global_mem_bandwidth" else int(raw)
            unknown = set(cp["device"]) - {f.name for f in fields(DeviceSpec)}
            if unknown:
                raise ConfigError(f"unknown device keys {sorted(unknown)}")
            dev = replace(dev, **dev_kw)
        if cp.has_section("cpi"):
            base = {f.name for f in fields(CpiTable)} - {"overrides"}
            kw: dict = {}
            overrides = {}
            for key, raw in cp["cpi"].items():
                if key in base:
                    kw[key] = float(raw)
                else:
                    CpiTable().cycles(key)  # validates the kind name
                    overrides[key] = float(raw)
            models = replace(models, cpi=CpiTable(**kw, overrides=overrides))
        if cp.has_section("memlatency"):
            curves = dict(default_mem_model().curves)
            for key, raw in cp["memlatency"].items():
                if key not in TRANSITIONS:
                    raise ConfigError(f"unknown memory transition {key!r}")
                curves[key] = _parse_curve(raw, f"memlatency.{key}")
            models = replace(models, mem=MemLatencyModel(curves))
        kw = {}
        for section in ("fusion", "planner"):
            if not cp.has_section(section):
                continue
            for key, raw in cp[section].items():
                if key == "block_sizes":
                    kw[key] = tuple(int(x) for x in raw.split(","))
                elif key == "fractional_waves":
                    kw[key] = cp[section].getboolean(key)
                elif key == "context_switch_cycles":
                    kw[key] = float(raw)
                elif key in {f.name for f in fields(CostModels)}:
                    kw[key] = int(raw)
                else:
                    raise ConfigError(f"unknown key {section}.{key}")
        models = replace(models, **kw)
    except ValueError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return dev, models
