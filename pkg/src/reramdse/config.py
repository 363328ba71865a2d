"""Toolkit configuration: one JSON file, strictly parsed.

Unknown sections or keys are errors, so a misspelled physical parameter can
never silently fall back to its default.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .circuit import CrossbarConfig, Termination
from .device import CellState, DeviceParams
from .testbench import FullScaleMode, TestbenchConfig, fingerprint


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class DeviceSection:
    g_lrs: float = 48e-6
    hrs_ratio: float = 100.0
    shape_b: float = 2.0
    v_read: float = 0.2

    def validate(self):
        if not (self.g_lrs > 0 and self.hrs_ratio > 1 and self.shape_b > 0 and self.v_read > 0):
            raise ConfigError("device: g_lrs, shape_b, v_read must be positive and hrs_ratio > 1")


@dataclass(frozen=True)
class WireSection:
    r_seg: float = 1.0
    c_seg: float = 0.5e-15
    termination: str = "single_sided"
    k_settle: float = 7.0

    def validate(self):
        if not (self.r_seg >= 0 and self.c_seg >= 0 and self.k_settle > 0):
            raise ConfigError("wire: r_seg and c_seg must be non-negative, k_settle positive")
        try:
            Termination(self.termination)
        except ValueError:
            raise ConfigError(f"wire.termination must be one of {[t.value for t in Termination]}") from None


@dataclass(frozen=True)
class TestbenchSection:
    __test__ = False

    samples_per_segment: int = 33
    v_peak: float | None = None
    error_state: str = "HRS"
    full_scale_mode: str = "scaled_by_n"
    full_scale_current: float | None = None

    def validate(self):
        try:
            self.to_testbench()
        except ValueError as exc:
            raise ConfigError(f"testbench: {exc}") from None

    def to_testbench(self) -> TestbenchConfig:
        return TestbenchConfig(samples_per_segment=int(self.samples_per_segment), v_peak=self.v_peak,
                               error_state=CellState(self.error_state),
                               full_scale_mode=FullScaleMode(self.full_scale_mode),
                               full_scale_current=self.full_scale_current)


@dataclass(frozen=True)
class SurrogateSection:
    sizes: tuple = (32, 64, 128, 192, 256)
    bits_list: tuple = (6, 7, 8, 9, 10, 11, 12, 13, 14)
    collapse_gate: float = 0.1
    interpolation: str = "log"

    def validate(self):
        if len(set(self.sizes)) < 2 or any(int(n) < 2 for n in self.sizes):
            raise ConfigError("surrogate.sizes needs at least two distinct sizes >= 2")
        if not self.bits_list or any(int(b) < 1 for b in self.bits_list):
            raise ConfigError("surrogate.bits_list must hold integers >= 1")
        if not self.collapse_gate > 0:
            raise ConfigError("surrogate.collapse_gate must be positive")
        if self.interpolation not in ("log", "linear"):
            raise ConfigError("surrogate.interpolation must be 'log' or 'linear'")


@dataclass(frozen=True)
class DseSection:
    """Explorer settings.

    ``v_drive`` is the array drive voltage for worst-case power (``None``
    means ``device.v_read``).  ``drive_match`` instead fixes it from a
    reported design point ``{"n", "f", "bits", "power"}`` that must sit
    exactly on its power budget.
    """

    ops_per_mac: float = 2.0
    dac_power_per_row: float = 0.0
    adc_anchor_bits: int = 14
    adc_anchor_energy: float = 39.19e-12
    v_drive: float | None = None
    drive_match: dict | None = None
    n_range: tuple = (32, 256, 1)
    f_range: tuple = (10e6, 500e6, 1e6)
    bits_range: tuple = (6, 14, 1)
    elmore_constraint: bool = False

    def validate(self):
        if not (self.ops_per_mac > 0 and self.dac_power_per_row >= 0 and self.adc_anchor_energy > 0
                and self.adc_anchor_bits >= 1):
            raise ConfigError("dse: ops_per_mac and adc_anchor_energy must be positive, dac power non-negative")
        if self.v_drive is not None and not self.v_drive > 0:
            raise ConfigError("dse.v_drive must be positive")
        if self.v_drive is not None and self.drive_match is not None:
            raise ConfigError("dse: give either v_drive or drive_match, not both")
        if self.drive_match is not None:
            keys = {"n", "f", "bits", "power"}
            if set(self.drive_match) != keys:
                raise ConfigError(f"dse.drive_match needs exactly the keys {sorted(keys)}")
        for name in ("n_range", "f_range", "bits_range"):
            r = getattr(self, name)
            if len(r) != 3 or not (r[0] > 0 and r[1] >= r[0] and r[2] > 0):
                raise ConfigError(f"dse.{name} must be [start, stop, step] with 0 < start <= stop, step > 0")


@dataclass(frozen=True)
class PathsSection:
    workspace: str = "workspace"

    def validate(self):
        if not self.workspace:
            raise ConfigError("paths.workspace must not be empty")


SECTIONS = {
    "device": DeviceSection,
    "wire": WireSection,
    "testbench": TestbenchSection,
    "surrogate": SurrogateSection,
    "dse": DseSection,
    "paths": PathsSection,
}
PHYSICAL = ("device", "wire", "testbench")


def _section(cls, raw, name):
    if not isinstance(raw, dict):
        raise ConfigError(f"section {name!r} must be an object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - known)
    if unknown:
        raise ConfigError(f"unknown key(s) in [{name}]: {', '.join(unknown)}")
    kwargs = {}
    for f in dataclasses.fields(cls):
        if f.name in raw:
            v = raw[f.name]
            kwargs[f.name] = tuple(v) if isinstance(v, list) else v
    sec = cls(**kwargs)
    sec.validate()
    return sec


@dataclass(frozen=True)
class ToolkitConfig:
    device: DeviceSection = field(default_factory=DeviceSection)
    wire: WireSection = field(default_factory=WireSection)
    testbench: TestbenchSection = field(default_factory=TestbenchSection)
    surrogate: SurrogateSection = field(default_factory=SurrogateSection)
    dse: DseSection = field(default_factory=DseSection)
    paths: PathsSection = field(default_factory=PathsSection)

    @classmethod
    def from_dict(cls, raw: dict) -> "ToolkitConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a JSON object")
        unknown = sorted(set(raw) - set(SECTIONS))
        if unknown:
            raise ConfigError(f"unknown section(s): {', '.join(unknown)}")
        return cls(**{name: _section(sc, raw.get(name, {}), name) for name, sc in SECTIONS.items()})

    @classmethod
    def load(cls, path) -> "ToolkitConfig":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        try:
            return cls.from_dict(raw)
        except TypeError as exc:
            raise ConfigError(f"{path}: {exc}") from None

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            sec = dataclasses.asdict(getattr(self, name))
            out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
        return out

    def save(self, path):
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2) + "\n")
        return path

    def replace(self, **sections) -> "ToolkitConfig":
        """Copy with selected fields changed, e.g. ``replace(wire={"r_seg": 0.5})``."""
        cur = self.to_dict()
        for name, changes in sections.items():
            cur[name].update(changes)
        return ToolkitConfig.from_dict(cur)

    @property
    def fingerprint(self) -> str:
        """Stable hash of the sections that change simulated numbers."""
        d = self.to_dict()
        return fingerprint({k: d[k] for k in PHYSICAL})

    # -- domain objects ---------------------------------------------------------

    def device_params(self) -> DeviceParams:
        d = self.device
        return DeviceParams.from_ratio(d.g_lrs, d.hrs_ratio, d.v_read, d.shape_b)

    def crossbar(self, n: int) -> CrossbarConfig:
        w = self.wire
        return CrossbarConfig(n=n, r_seg=w.r_seg, c_seg=w.c_seg, termination=Termination(w.termination),
                              v_drive=self.device.v_read, k_settle=w.k_settle)

    def testbench_config(self) -> TestbenchConfig:
        return self.testbench.to_testbench()
