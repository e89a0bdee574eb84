"""SoC-level cycle, energy, and power accounting.

Aggregates the systolic and edit-distance cycle formulas over a
stage-tagged workload trace and applies a flat per-operation-class
energy table. The shipped defaults and their derivations live in
configs/soc_default.json; they are calibrated numbers, not silicon
measurements.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from importlib import resources

from .ed_engine import EdCycleConfig, ed_cycles
from .mat_engine import CoreConfig, SystolicConfig, core_gemm_cycles, systolic_cycles

CONFIG_VERSION = 1


@dataclass(frozen=True)
class EnergyTable:
    core_mac_pj: float = 10.0
    mat_mac_pj: float = 0.7
    ed_cell_pj: float = 1.0
    core_cycle_pj: float = 0.4  # ED core-path proxy
    sram_byte_pj: float = 0.2

    def __post_init__(self):
        for name, value in vars(self).items():
            if not value > 0:
                raise ValueError(f"energy table entry {name} must be positive")


@dataclass(frozen=True)
class SocConfig:
    clock_hz: float = 250e6
    sram_bytes: int = 716800
    systolic: SystolicConfig = field(default_factory=SystolicConfig)
    core: CoreConfig = field(default_factory=CoreConfig)
    ed: EdCycleConfig = field(default_factory=EdCycleConfig)
    energy: EnergyTable = field(default_factory=EnergyTable)
    version: int = CONFIG_VERSION

    def __post_init__(self):
        if not self.clock_hz > 0 or self.sram_bytes < 1:
            raise ValueError("clock_hz and sram_bytes must be positive")


def soc_config_from_dict(doc: dict) -> SocConfig:
    if doc.get("version") != CONFIG_VERSION:
        raise ValueError(f"unsupported SoC config version {doc.get('version')!r}")
    energy = doc.get("energy_pj", {})
    ed = doc.get("ed", {})
    return SocConfig(
        clock_hz=float(doc.get("clock_hz", 250e6)),
        sram_bytes=int(doc.get("sram_bytes", 716800)),
        systolic=SystolicConfig(**doc.get("systolic", {})),
        core=CoreConfig(**doc.get("core", {})),
        ed=EdCycleConfig(
            core_cycles_per_cell=float(ed.get("core_cycles_per_cell", 111.0)),
            cells_per_cycle=float(ed.get("cells_per_cycle", 0.375)),
            overhead_cycles=int(ed.get("overhead_cycles", 912)),
        ),
        energy=EnergyTable(
            core_mac_pj=float(energy.get("core_mac", 10.0)),
            mat_mac_pj=float(energy.get("mat_mac", 0.7)),
            ed_cell_pj=float(energy.get("ed_cell", 1.0)),
            core_cycle_pj=float(energy.get("core_cycle", 0.4)),
            sram_byte_pj=float(energy.get("sram_byte", 0.2)),
        ),
        version=CONFIG_VERSION,
    )


def default_soc_config() -> SocConfig:
    text = resources.files("nanosoc.configs").joinpath("soc_default.json").read_text()
    return soc_config_from_dict(json.loads(text))


def load_soc_config(path) -> SocConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return soc_config_from_dict(json.load(fh))


class StageTrace:
    """Operation counts for one pipeline stage."""

    def __init__(self):
        self.gemms: Counter = Counter()  # (m, k, n) -> calls
        self.ed_pairs: Counter = Counter()  # (n, m) -> comparisons
        self.sram_bytes = 0

    @property
    def macs(self) -> int:
        return sum(m * k * n * c for (m, k, n), c in self.gemms.items())

    @property
    def dp_cells(self) -> int:
        return sum(n * m * c for (n, m), c in self.ed_pairs.items())


class WorkloadTrace:
    """Stage-tagged operation counts gathered from an instrumented run.

    Counts depend only on the work submitted, never on thread schedule.
    """

    def __init__(self):
        self.stages: dict[str, StageTrace] = {}

    def stage(self, name: str) -> StageTrace:
        if name not in self.stages:
            self.stages[name] = StageTrace()
        return self.stages[name]

    def add_gemm(self, stage: str, m: int, k: int, n: int, count: int = 1) -> None:
        st = self.stage(stage)
        st.gemms[(m, k, n)] += count
        # operand + result traffic at one byte per element (int8 path)
        st.sram_bytes += (m * k + k * n + m * n) * count

    def add_ed(self, stage: str, n: int, m: int, count: int = 1) -> None:
        st = self.stage(stage)
        st.ed_pairs[(n, m)] += count
        st.sram_bytes += (n + m) * count

    def merge(self, other: "WorkloadTrace") -> None:
        for name, st in other.stages.items():
            mine = self.stage(name)
            mine.gemms.update(st.gemms)
            mine.ed_pairs.update(st.ed_pairs)
            mine.sram_bytes += st.sram_bytes

    def total_macs(self) -> int:
        return sum(st.macs for st in self.stages.values())

    def total_dp_cells(self) -> int:
        return sum(st.dp_cells for st in self.stages.values())

    def to_dict(self) -> dict:
        return {
            "version": 1,
            "stages": {
                name: {
                    "gemms": sorted([list(k) + [c] for k, c in st.gemms.items()]),
                    "ed": sorted([list(k) + [c] for k, c in st.ed_pairs.items()]),
                    "sram_bytes": st.sram_bytes,
                }
                for name, st in sorted(self.stages.items())
            },
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "WorkloadTrace":
        if doc.get("version") != 1:
            raise ValueError(f"unsupported trace version {doc.get('version')!r}")
        trace = cls()
        for name, st in doc.get("stages", {}).items():
            stage = trace.stage(name)
            for m, k, n, c in st.get("gemms", []):
                stage.gemms[(int(m), int(k), int(n))] += int(c)
            for n, m, c in st.get("ed", []):
                stage.ed_pairs[(int(n), int(m))] += int(c)
            stage.sram_bytes = int(st.get("sram_bytes", 0))
        return trace


@dataclass
class StagePerf:
    macs: int = 0
    dp_cells: int = 0
    sram_bytes: int = 0
    core_cycles: int = 0
    accel_cycles: int = 0
    energy_core_pj: float = 0.0
    energy_accel_pj: float = 0.0
    ed_query_bases: int = 0
    ed_accel_cycles: int = 0

    @property
    def speedup(self) -> float:
        return self.core_cycles / self.accel_cycles if self.accel_cycles else 0.0

    @property
    def energy_ratio(self) -> float:
        return self.energy_core_pj / self.energy_accel_pj if self.energy_accel_pj else 0.0


@dataclass
class PerfReport:
    stages: dict[str, StagePerf]
    totals: StagePerf
    speedup: float
    energy_ratio: float
    avg_power_w: float
    ed_query_bases_per_s: float | None
    clock_hz: float

    def to_dict(self) -> dict:
        def stage_dict(sp: StagePerf) -> dict:
            return {
                "macs": sp.macs,
                "dp_cells": sp.dp_cells,
                "sram_bytes": sp.sram_bytes,
                "core_cycles": sp.core_cycles,
                "accel_cycles": sp.accel_cycles,
                "energy_core_pj": sp.energy_core_pj,
                "energy_accel_pj": sp.energy_accel_pj,
                "speedup": sp.speedup,
                "energy_ratio": sp.energy_ratio,
            }

        return {
            "version": 1,
            "clock_hz": self.clock_hz,
            "stages": {name: stage_dict(sp) for name, sp in sorted(self.stages.items())},
            "totals": stage_dict(self.totals),
            "speedup": self.speedup,
            "energy_ratio": self.energy_ratio,
            "avg_power_w": self.avg_power_w,
            "ed_query_bases_per_s": self.ed_query_bases_per_s,
        }


def _stage_perf(st: StageTrace, cfg: SocConfig) -> StagePerf:
    sp = StagePerf(macs=st.macs, dp_cells=st.dp_cells, sram_bytes=st.sram_bytes)
    for (m, k, n), c in st.gemms.items():
        sp.core_cycles += core_gemm_cycles(m, k, n, cfg.core) * c
        sp.accel_cycles += systolic_cycles(m, k, n, cfg.systolic) * c
    for (n, m), c in st.ed_pairs.items():
        core, accel = ed_cycles(n, m, cfg.ed)
        sp.core_cycles += core * c
        sp.accel_cycles += accel * c
        sp.ed_query_bases += n * c
        sp.ed_accel_cycles += accel * c
    e = cfg.energy
    ed_core_cycles = sum(ed_cycles(n, m, cfg.ed)[0] * c for (n, m), c in st.ed_pairs.items())
    sp.energy_core_pj = sp.macs * e.core_mac_pj + ed_core_cycles * e.core_cycle_pj
    sp.energy_accel_pj = (
        sp.macs * e.mat_mac_pj + sp.dp_cells * e.ed_cell_pj + sp.sram_bytes * e.sram_byte_pj
    )
    return sp


def perf_report(trace: WorkloadTrace, cfg: SocConfig | None = None) -> PerfReport:
    """Apply cycle formulas and the energy table to a workload trace."""
    if cfg is None:
        cfg = default_soc_config()
    stages = {name: _stage_perf(st, cfg) for name, st in trace.stages.items()}
    totals = StagePerf()
    for sp in stages.values():
        totals.macs += sp.macs
        totals.dp_cells += sp.dp_cells
        totals.sram_bytes += sp.sram_bytes
        totals.core_cycles += sp.core_cycles
        totals.accel_cycles += sp.accel_cycles
        totals.energy_core_pj += sp.energy_core_pj
        totals.energy_accel_pj += sp.energy_accel_pj
        totals.ed_query_bases += sp.ed_query_bases
        totals.ed_accel_cycles += sp.ed_accel_cycles
    ed_tp = None
    if totals.ed_query_bases and totals.ed_accel_cycles:
        ed_tp = totals.ed_query_bases * cfg.clock_hz / totals.ed_accel_cycles
    avg_power = 0.0
    if totals.accel_cycles:
        avg_power = (totals.energy_accel_pj * 1e-12) / (totals.accel_cycles / cfg.clock_hz)
    return PerfReport(
        stages=stages,
        totals=totals,
        speedup=totals.speedup,
        energy_ratio=totals.energy_ratio,
        avg_power_w=avg_power,
        ed_query_bases_per_s=ed_tp,
        clock_hz=cfg.clock_hz,
    )


def render_table(report: PerfReport) -> str:
    """Aligned-column text table of a perf report."""
    headers = ["stage", "macs", "dp_cells", "core_cyc", "accel_cyc", "speedup", "e_ratio"]
    rows = []
    for name in sorted(report.stages):
        sp = report.stages[name]
        rows.append(
            [
                name,
                str(sp.macs),
                str(sp.dp_cells),
                str(sp.core_cycles),
                str(sp.accel_cycles),
                f"{sp.speedup:.2f}",
                f"{sp.energy_ratio:.2f}",
            ]
        )
    t = report.totals
    rows.append(
        [
            "TOTAL",
            str(t.macs),
            str(t.dp_cells),
            str(t.core_cycles),
            str(t.accel_cycles),
            f"{report.speedup:.2f}",
            f"{report.energy_ratio:.2f}",
        ]
    )
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(headers)]
    lines = ["  ".join(h.ljust(widths[i]) for i, h in enumerate(headers))]
    lines.append("  ".join("-" * w for w in widths))
    for r in rows:
        lines.append("  ".join(r[i].ljust(widths[i]) for i in range(len(headers))))
    lines.append(f"avg_power_w={report.avg_power_w:.6f}")
    if report.ed_query_bases_per_s is not None:
        lines.append(f"ed_query_bases_per_s={report.ed_query_bases_per_s:.0f}")
    return "\n".join(lines)


@dataclass
class WorkingSet:
    stage: str
    parts: dict[str, int]  # name -> bytes

    @property
    def total(self) -> int:
        return sum(self.parts.values())


@dataclass
class SramCheck:
    fits: bool
    peak_bytes: int
    limit_bytes: int
    overflow_bytes: int
    peak_stage: str


def sram_check(working_sets, cfg: SocConfig | None = None) -> SramCheck:
    """Compare peak simultaneous residency against the SRAM budget."""
    if cfg is None:
        cfg = default_soc_config()
    peak = 0
    peak_stage = ""
    for ws in working_sets:
        if ws.total > peak:
            peak = ws.total
            peak_stage = ws.stage
    fits = peak <= cfg.sram_bytes
    return SramCheck(
        fits=fits,
        peak_bytes=peak,
        limit_bytes=cfg.sram_bytes,
        overflow_bytes=max(0, peak - cfg.sram_bytes),
        peak_stage=peak_stage,
    )


def basecall_working_sets(spec, chunk_len: int, quantized: bool) -> list[WorkingSet]:
    """Static per-layer working sets for a basecall over one chunk.

    Weights are resident for the whole stage (1 B/param quantized,
    4 B/param float32); the activation term is the largest single layer
    output at 1 B/element, as the accelerator path stores int8 frames.
    """
    from .basecaller import param_count

    weight_bytes = param_count(spec) * (1 if quantized else 4)
    act_peak = 0
    t = chunk_len
    for layer in spec.layers:
        t = layer.out_len(t)
        act_peak = max(act_peak, layer.c_out * t)
    return [
        WorkingSet(
            "basecall",
            {
                "weights": weight_bytes,
                "activations": act_peak,
                "input_chunk": chunk_len,
            },
        )
    ]
