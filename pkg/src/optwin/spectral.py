"""Channel grids, power spectra, unit conversions and spectral statistics.

All internal power bookkeeping is linear milliwatts; dB/dBm appear only at
interfaces. Frequencies are THz, channel bandwidths GHz.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

BANDS = ("L", "C")

#: convention: L-band sits strictly below C-band in frequency
_BAND_ORDER = {"L": 0, "C": 1}


class SpectralError(ValueError):
    """Invalid grid, plan or spectrum."""


@dataclass(frozen=True)
class Channel:
    index: int
    center_frequency_thz: float
    symbol_bandwidth_ghz: float
    slot_spacing_ghz: float
    band: str

    def __post_init__(self):
        if self.band not in BANDS:
            raise SpectralError(f"unknown band {self.band!r}")
        if self.symbol_bandwidth_ghz <= 0 or self.slot_spacing_ghz <= 0:
            raise SpectralError("channel bandwidth and spacing must be positive")
        if self.symbol_bandwidth_ghz > self.slot_spacing_ghz + 1e-9:
            raise SpectralError(
                f"channel {self.index}: symbol bandwidth {self.symbol_bandwidth_ghz} GHz "
                f"exceeds slot spacing {self.slot_spacing_ghz} GHz"
            )


@dataclass(frozen=True)
class ChannelGrid:
    """Ordered, non-overlapping set of WDM channels."""

    channels: tuple[Channel, ...]

    def __post_init__(self):
        if not self.channels:
            raise SpectralError("grid needs at least one channel")
        freqs = [c.center_frequency_thz for c in self.channels]
        for a, b in zip(freqs, freqs[1:]):
            if b <= a:
                raise SpectralError("grid frequencies must be strictly increasing")
        for ca, cb in zip(self.channels, self.channels[1:]):
            min_sep = (ca.slot_spacing_ghz + cb.slot_spacing_ghz) / 2.0 * 1e-3
            if (cb.center_frequency_thz - ca.center_frequency_thz) < min_sep - 1e-9:
                raise SpectralError(
                    f"slots of channels {ca.index} and {cb.index} overlap"
                )

    def __len__(self) -> int:
        return len(self.channels)

    @property
    def frequencies_thz(self) -> np.ndarray:
        return np.array([c.center_frequency_thz for c in self.channels])

    @property
    def bandwidths_thz(self) -> np.ndarray:
        return np.array([c.symbol_bandwidth_ghz for c in self.channels]) * 1e-3

    def band_mask(self, band: str) -> np.ndarray:
        if band == "CL":
            return np.ones(len(self.channels), dtype=bool)
        return np.array([c.band == band for c in self.channels])

    def band_range_thz(self, band: str) -> tuple[float, float]:
        freqs = self.frequencies_thz[self.band_mask(band)]
        if freqs.size == 0:
            raise SpectralError(f"grid has no channels in band {band!r}")
        return float(freqs.min()), float(freqs.max())

    def index_of(self, channel_index: int) -> int:
        for pos, ch in enumerate(self.channels):
            if ch.index == channel_index:
                return pos
        raise SpectralError(f"channel index {channel_index} not on grid")


@dataclass(frozen=True)
class BandSpec:
    band: str
    f_min_thz: float
    f_max_thz: float
    count: int


@dataclass(frozen=True)
class BandPlan:
    """Explicit description of the transmitted comb, one entry per band."""

    bands: tuple[BandSpec, ...]
    spacing_ghz: float
    symbol_bandwidth_ghz: float = 91.6
    name: str = ""

    def __post_init__(self):
        if self.spacing_ghz <= 0:
            raise SpectralError("spacing must be positive")
        seen = set()
        for spec in self.bands:
            if spec.band in seen:
                raise SpectralError(f"band {spec.band} listed twice")
            seen.add(spec.band)
            if spec.f_min_thz > spec.f_max_thz or (
                spec.f_min_thz == spec.f_max_thz and spec.count != 1
            ):
                raise SpectralError(f"band {spec.band}: f_min must be below f_max")
            if spec.count < 1:
                raise SpectralError("band channel count must be >= 1")
        ordered = sorted(self.bands, key=lambda s: _BAND_ORDER[s.band])
        for lo, hi in zip(ordered, ordered[1:]):
            if lo.f_max_thz >= hi.f_min_thz:
                raise SpectralError(
                    f"bands {lo.band} and {hi.band} overlap in frequency"
                )


def build_grid(plan: BandPlan) -> ChannelGrid:
    """Lay channels at f_min + k*spacing per band, ascending in frequency.

    The declared band edge f_max must agree with the last laid channel to
    within half a slot, otherwise the plan is inconsistent.
    """
    channels: list[Channel] = []
    spacing_thz = plan.spacing_ghz * 1e-3
    index = 0
    for spec in sorted(plan.bands, key=lambda s: s.f_min_thz):
        last = spec.f_min_thz + (spec.count - 1) * spacing_thz
        if abs(last - spec.f_max_thz) > spacing_thz / 2 + 1e-9:
            raise SpectralError(
                f"band {spec.band}: {spec.count} channels at {plan.spacing_ghz} GHz "
                f"end at {last:.4f} THz, inconsistent with f_max {spec.f_max_thz} THz"
            )
        for k in range(spec.count):
            channels.append(
                Channel(
                    index=index,
                    center_frequency_thz=spec.f_min_thz + k * spacing_thz,
                    symbol_bandwidth_ghz=plan.symbol_bandwidth_ghz,
                    slot_spacing_ghz=plan.spacing_ghz,
                    band=spec.band,
                )
            )
            index += 1
    return ChannelGrid(channels=tuple(channels))


OCCUPANCIES = ("signal", "ase_filler", "dark")


class PowerSpectrum:
    """Per-channel linear power (mW) on a grid, with slot occupancy."""

    __slots__ = ("grid", "powers_mw", "occupancy")

    def __init__(self, grid: ChannelGrid, powers_mw, occupancy: Sequence[str] | None = None):
        powers = np.asarray(powers_mw, dtype=float).copy()
        if powers.shape != (len(grid),):
            raise SpectralError(
                f"power vector length {powers.shape} does not match grid size {len(grid)}"
            )
        if np.any(powers < 0) or not np.all(np.isfinite(powers)):
            raise SpectralError("powers must be finite and non-negative")
        if occupancy is None:
            occupancy = tuple("signal" if p > 0 else "dark" for p in powers)
        occupancy = tuple(occupancy)
        if len(occupancy) != len(grid):
            raise SpectralError("occupancy length does not match grid size")
        for occ, p in zip(occupancy, powers):
            if occ not in OCCUPANCIES:
                raise SpectralError(f"unknown occupancy {occ!r}")
            if occ == "dark" and p != 0.0:
                raise SpectralError("dark channels must carry exactly zero power")
        powers.setflags(write=False)
        self.grid = grid
        self.powers_mw = powers
        self.occupancy = occupancy

    def __eq__(self, other) -> bool:
        if not isinstance(other, PowerSpectrum):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.occupancy == other.occupancy
            and np.array_equal(self.powers_mw, other.powers_mw)
        )

    def __repr__(self) -> str:
        lit = int(np.count_nonzero(self.powers_mw > 0))
        return f"PowerSpectrum({len(self.grid)} ch, {lit} lit, {self.total_mw():.3g} mW)"

    @property
    def lit_mask(self) -> np.ndarray:
        return self.powers_mw > 0

    def total_mw(self) -> float:
        return float(self.powers_mw.sum())

    def with_powers(self, powers_mw, occupancy: Sequence[str] | None = None) -> "PowerSpectrum":
        """New spectrum on the same grid; occupancy defaults to the current one."""
        if occupancy is None:
            occupancy = tuple(
                "dark" if p == 0 and occ == "dark" else occ
                for occ, p in zip(self.occupancy, np.asarray(powers_mw, dtype=float))
            )
        return PowerSpectrum(self.grid, powers_mw, occupancy)


def from_dbm(dbm: float) -> float:
    """dBm to linear mW; -inf maps to 0 mW."""
    if dbm == -math.inf:
        return 0.0
    return 10.0 ** (dbm / 10.0)


def to_dbm(mw: float) -> float:
    """Linear mW to dBm; 0 mW maps to -inf."""
    if mw < 0:
        raise SpectralError(f"negative linear power {mw} mW")
    if mw == 0.0:
        return -math.inf
    return 10.0 * math.log10(mw)


def dbm_array(powers_mw: np.ndarray) -> np.ndarray:
    """Vectorised to_dbm; zeros map to -inf without warnings."""
    powers = np.asarray(powers_mw, dtype=float)
    out = np.full(powers.shape, -np.inf)
    mask = powers > 0
    out[mask] = 10.0 * np.log10(powers[mask])
    return out


def spectral_tilt(spectrum: PowerSpectrum) -> float:
    """Least-squares slope of lit-channel power (dB) vs frequency (THz).

    Negative values mean the low-frequency (L-band) side carries more power,
    which is the signature of SRS transfer toward longer wavelengths.
    """
    mask = spectrum.lit_mask
    if int(mask.sum()) < 2:
        raise SpectralError("tilt needs at least two lit channels")
    f = spectrum.grid.frequencies_thz[mask]
    y = dbm_array(spectrum.powers_mw[mask])
    fc = f.mean()
    df = f - fc
    return float(np.dot(df, y - y.mean()) / np.dot(df, df))


def tilt_anchor_db(spectrum: PowerSpectrum) -> float:
    """Fitted dB level at the centroid of the lit band (reporting companion
    to :func:`spectral_tilt`)."""
    mask = spectrum.lit_mask
    if int(mask.sum()) < 2:
        raise SpectralError("tilt needs at least two lit channels")
    y = dbm_array(spectrum.powers_mw[mask])
    return float(y.mean())


def channel_stats(spectrum: PowerSpectrum) -> dict:
    """Totals over the spectrum: linear sum, mean dBm over lit slots, lit count."""
    mask = spectrum.lit_mask
    lit = int(mask.sum())
    total = spectrum.total_mw()
    mean_dbm = float(dbm_array(spectrum.powers_mw[mask]).mean()) if lit else None
    return {"total_mw": total, "mean_dbm": mean_dbm, "lit_count": lit}


# ---------------------------------------------------------------------------
# JSON documents


def grid_to_document(grid: ChannelGrid) -> list[dict]:
    return [
        {
            "index": c.index,
            "frequency_thz": c.center_frequency_thz,
            "symbol_bandwidth_ghz": c.symbol_bandwidth_ghz,
            "slot_spacing_ghz": c.slot_spacing_ghz,
            "band": c.band,
        }
        for c in grid.channels
    ]


def grid_from_document(doc: Iterable[Mapping]) -> ChannelGrid:
    return ChannelGrid(
        channels=tuple(
            Channel(
                index=int(d["index"]),
                center_frequency_thz=float(d["frequency_thz"]),
                symbol_bandwidth_ghz=float(d["symbol_bandwidth_ghz"]),
                slot_spacing_ghz=float(d["slot_spacing_ghz"]),
                band=str(d["band"]),
            )
            for d in doc
        )
    )


def spectrum_to_document(spectrum: PowerSpectrum) -> list[dict]:
    """Rows of {index, frequency_thz, power_dbm, occupancy}; dark -> null dBm."""
    rows = []
    for ch, p, occ in zip(spectrum.grid.channels, spectrum.powers_mw, spectrum.occupancy):
        rows.append(
            {
                "index": ch.index,
                "frequency_thz": ch.center_frequency_thz,
                "power_dbm": None if p == 0.0 else to_dbm(float(p)),
                "occupancy": occ,
            }
        )
    return rows


def spectrum_from_document(grid: ChannelGrid, doc: Iterable[Mapping]) -> PowerSpectrum:
    rows = {int(d["index"]): d for d in doc}
    powers = np.zeros(len(grid))
    occupancy = []
    for pos, ch in enumerate(grid.channels):
        d = rows.get(ch.index)
        if d is None:
            occupancy.append("dark")
            continue
        dbm = d.get("power_dbm")
        powers[pos] = 0.0 if dbm is None else from_dbm(float(dbm))
        occupancy.append(str(d.get("occupancy", "signal" if powers[pos] > 0 else "dark")))
    return PowerSpectrum(grid, powers, occupancy)


def band_plan_to_document(plan: BandPlan) -> dict:
    return {
        "name": plan.name,
        "spacing_ghz": plan.spacing_ghz,
        "symbol_bandwidth_ghz": plan.symbol_bandwidth_ghz,
        "bands": [
            {
                "band": s.band,
                "f_min_thz": s.f_min_thz,
                "f_max_thz": s.f_max_thz,
                "count": s.count,
            }
            for s in plan.bands
        ],
    }


def band_plan_from_document(doc: Mapping) -> BandPlan:
    return BandPlan(
        bands=tuple(
            BandSpec(
                band=str(b["band"]),
                f_min_thz=float(b["f_min_thz"]),
                f_max_thz=float(b["f_max_thz"]),
                count=int(b["count"]),
            )
            for b in doc["bands"]
        ),
        spacing_ghz=float(doc["spacing_ghz"]),
        symbol_bandwidth_ghz=float(doc.get("symbol_bandwidth_ghz", 91.6)),
        name=str(doc.get("name", "")),
    )
