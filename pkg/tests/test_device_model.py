from __future__ import annotations

import math
from dataclasses import replace

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stitchplan.device_model import (
    CONFIG_ENV,
    CpiTable,
    DeviceSpec,
    LaunchDims,
    MemLatencyModel,
    TRANSITIONS,
    default_mem_model,
    kernel_latency,
    load_config,
    mem_transfer_saving,
    occupancy,
    wave_count,
    warp_latency,
)
from stitchplan.errors import ConfigError, InfeasibleKernel

DEV = DeviceSpec()
MEM = default_mem_model()


def occupancy_oracle(block, regs, shmem, dev):
    """Resident warps per SM found by adding blocks one at a time until a resource runs out."""
    blocks = 0
    while True:
        nxt = blocks + 1
        if nxt > dev.max_blocks_per_sm:
            break
        if nxt * max(shmem, 1) > dev.shared_mem_per_sm:
            break
        if nxt * regs * block > dev.registers_per_sm:
            break
        if nxt * block > dev.max_warps_per_sm * dev.warp_size:
            break
        blocks = nxt
    occ = blocks * (block // dev.warp_size) / dev.max_warps_per_sm
    return min(1.0, max(occ, 1 / dev.max_warps_per_sm))


def per_wave_latency(n_warps, occ, lw, dev):
    """Fill waves of ``occ * sms * warps`` slots one at a time; a partial wave costs its share."""
    cap = occ * dev.sm_count * dev.max_warps_per_sm
    left, total = float(n_warps), 0.0
    while left > 1e-12:
        take = min(cap, left)
        total += take / cap * lw
        left -= take
    return total


# -- examples -----------------------------------------------------------------------------------


def test_occupancy_no_limit_binds():
    assert occupancy(LaunchDims(1, 64), 16, 0, DEV) == 1.0


def test_occupancy_one_block_by_shared_memory():
    dev = replace(DEV, shared_mem_per_block_limit=DEV.shared_mem_per_sm)
    occ = occupancy(LaunchDims(1, 256), 16, dev.shared_mem_per_sm, dev)
    assert occ == pytest.approx((256 / 32) / 64)


def test_occupancy_never_zero_and_limit_signal():
    occ = occupancy(LaunchDims(1, 1024), 255, 0, DEV)
    assert occ == pytest.approx(1 / 64)
    with pytest.raises(InfeasibleKernel):
        occupancy(LaunchDims(1, 64), 16, DEV.shared_mem_per_block_limit + 1, DEV)


def test_wave_count_examples():
    assert wave_count(0, 0.7, DEV) == 0
    assert wave_count(2560, 0.5, DEV) == pytest.approx(1.0)
    assert wave_count(5120, 0.5, DEV) == pytest.approx(2 * wave_count(2560, 0.5, DEV))
    assert wave_count(2561, 0.5, DEV, ceil=True) == 2.0


def test_warp_latency_examples():
    cpi = CpiTable()
    assert warp_latency({}, cpi) == 0
    assert warp_latency({"add": 10}, cpi) == 40
    a, b = {"add": 3, "exp": 2}, {"add": 1, "shuffle": 4}
    both = {"add": 4, "exp": 2, "shuffle": 4}
    assert warp_latency(both, cpi) == warp_latency(a, cpi) + warp_latency(b, cpi)
    with pytest.raises(ConfigError):
        warp_latency({"bogus": 1}, cpi)


def test_cpi_override():
    cpi = CpiTable(overrides={"exp": 40.0})
    assert cpi.cycles("exp") == 40 and cpi.cycles("tanh") == 32


def test_mem_transfer_saving_examples():
    xs, ys = MEM.curves["global_to_register"]
    assert mem_transfer_saving(0, "global_to_register", MEM) == 0
    for x, y in zip(xs, ys):
        assert mem_transfer_saving(x, "global_to_register", MEM) == y
    mid = (xs[1] + xs[2]) / 2
    assert mem_transfer_saving(mid, "global_to_register", MEM) == pytest.approx((ys[1] + ys[2]) / 2)
    slope = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    assert mem_transfer_saving(xs[-1] + 1000, "global_to_register", MEM) == pytest.approx(ys[-1] + 1000 * slope)
    with pytest.raises(ConfigError):
        mem_transfer_saving(10, "register_to_disk", MEM)


def test_mem_model_rejects_bad_curves():
    with pytest.raises(ConfigError):
        MemLatencyModel({"global_to_register": ((0, 10, 10), (0, 1, 2))})
    with pytest.raises(ConfigError):
        MemLatencyModel({"global_to_register": ((0, 10), (0, -1))})


def test_launch_dims_checks():
    with pytest.raises(InfeasibleKernel):
        LaunchDims(1, 48).check(DEV)
    with pytest.raises(InfeasibleKernel):
        LaunchDims(1, 2048).check(DEV)


# -- configuration ------------------------------------------------------------------------------


def test_bundled_config_matches_defaults(dev, models):
    assert dev == DeviceSpec()
    assert models.cpi.light == 4 and models.cpi.expensive == 32 and models.cpi.reduce_step == 8
    assert models.cpi.shared_access == 30 and models.cpi.shuffle == 5
    assert models.delta_fixed_registers == 16
    assert models.register_overhead == 8
    assert models.block_sizes == (64, 128, 256, 512, 1024)


def test_config_env_var_and_errors(tmp_path, monkeypatch):
    cfg = tmp_path / "dev.ini"
    cfg.write_text("[device]\nsm_count = 8\n[cpi]\nexp = 50\n[fusion]\ncontext_switch_cycles = 100\n")
    monkeypatch.setenv(CONFIG_ENV, str(cfg))
    dev, models = load_config(None)
    assert dev.sm_count == 8 and models.cpi.cycles("exp") == 50 and models.context_switch_cycles == 100
    bad = tmp_path / "bad.ini"
    bad.write_text("[device]\nwarp_size = 33\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    bad.write_text("[cpi]\nfoo = 1\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.ini")


# -- properties ---------------------------------------------------------------------------------

blocks = st.sampled_from([32, 64, 128, 256, 512, 1024])
regs = st.integers(1, 255)
shmem = st.integers(0, DEV.shared_mem_per_block_limit)


@settings(max_examples=1000, deadline=None)
@given(blocks, regs, regs, shmem)
def test_occupancy_monotone_in_registers(block, r1, r2, sm):
    lo, hi = sorted((r1, r2))
    ld = LaunchDims(1, block)
    assert occupancy(ld, hi, sm, DEV) <= occupancy(ld, lo, sm, DEV)


@settings(max_examples=1000, deadline=None)
@given(blocks, regs, shmem, shmem)
def test_occupancy_monotone_in_shared_memory(block, r, s1, s2):
    lo, hi = sorted((s1, s2))
    ld = LaunchDims(1, block)
    assert occupancy(ld, r, hi, DEV) <= occupancy(ld, r, lo, DEV)


@settings(max_examples=1000, deadline=None)
@given(blocks, regs, shmem)
def test_occupancy_matches_incremental_oracle(block, r, sm):
    assert occupancy(LaunchDims(1, block), r, sm, DEV) == pytest.approx(occupancy_oracle(block, r, sm, DEV))


@settings(max_examples=1000, deadline=None)
@given(st.floats(0, 1e7), st.floats(1 / 64, 1.0))
def test_wave_count_identity(n, occ):
    w = wave_count(n, occ, DEV)
    assert math.isclose(w * (occ * DEV.sm_count * DEV.max_warps_per_sm), n, rel_tol=1e-9, abs_tol=1e-9)


@settings(max_examples=1000, deadline=None)
@given(st.sampled_from(TRANSITIONS), st.floats(0, 4e6), st.floats(0, 4e6))
def test_mem_saving_monotone(tr, a, b):
    lo, hi = sorted((a, b))
    assert mem_transfer_saving(lo, tr, MEM) <= mem_transfer_saving(hi, tr, MEM)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 200_000), blocks, regs, shmem,
       st.dictionaries(st.sampled_from(["add", "exp", "shuffle", "shared_load", "reduce_step"]),
                       st.integers(0, 50), max_size=5))
def test_kernel_latency_matches_per_wave_simulation(models, n, block, r, sm, hist):
    ld = LaunchDims(1, block)
    occ = occupancy(ld, r, sm, DEV)
    lw = warp_latency(hist, models.cpi)
    got = kernel_latency(n, hist, ld, r, sm, DEV, models)
    assert math.isclose(got, per_wave_latency(n, occ, lw, DEV), rel_tol=1e-9, abs_tol=1e-6)
