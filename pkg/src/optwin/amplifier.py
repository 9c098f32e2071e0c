"""EDFA gain application with tilt and ripple, frequency-dependent ASE
generation, and output-power clamping.

ASE is generated per channel as h*f*NF*(G-1)*B_ref with the dual-polarisation
convention folded into the noise figure; B_ref is the 0.1 nm reference
bandwidth used consistently for ASE and GSNR.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .spectral import ChannelGrid, PowerSpectrum, to_dbm

PLANCK_J_S = 6.62607015e-34
#: reference noise bandwidth, Hz (0.1 nm at 1550 nm convention)
B_REF_HZ = 12.5e9

AMP_BANDS = ("C", "L", "CL")


class AmplifierError(ValueError):
    pass


@dataclass(frozen=True)
class EdfaConfig:
    """One logical EDFA covering one band.

    ``tilt_db`` is the total edge-to-edge gain difference across the amp
    band, anchored at the band centre (high edge gets +tilt/2). ``ripple_db``
    is an additive per-channel deviation sampled at ``ripple_nodes_thz`` and
    interpolated linearly in between; it is the calibration target and
    defaults to flat zero.
    """

    amp_id: str
    band: str = "CL"
    target_gain_db: float = 20.0
    tilt_db: float = 0.0
    ripple_db: tuple[float, ...] | None = None
    ripple_nodes_thz: tuple[float, ...] | None = None
    noise_figure_db: float | tuple[tuple[float, float], ...] = 5.0
    band_range_thz: tuple[float, float] | None = None
    max_total_output_dbm: float = 23.0
    voa_out_db: float = 0.0
    site: str = ""

    def __post_init__(self):
        if self.band not in AMP_BANDS:
            raise AmplifierError(f"unknown amp band {self.band!r}")
        if not 0.0 <= self.target_gain_db <= 40.0:
            raise AmplifierError("gain outside [0, 40] dB")
        if abs(self.tilt_db) > 6.0:
            raise AmplifierError("|tilt| exceeds 6 dB")
        if self.voa_out_db < 0:
            raise AmplifierError("voa must be non-negative")
        if self.ripple_db is not None:
            if any(abs(r) > 3.0 for r in self.ripple_db):
                raise AmplifierError("|ripple| exceeds 3 dB")
            if self.ripple_nodes_thz is None or len(self.ripple_nodes_thz) != len(self.ripple_db):
                raise AmplifierError("ripple vector needs matching frequency nodes")
        nf = self.noise_figure_db
        if isinstance(nf, (int, float)):
            if not 3.0 <= nf <= 10.0:
                raise AmplifierError("NF outside [3, 10] dB")
        else:
            if not nf or any(not 3.0 <= v <= 10.0 for _, v in nf):
                raise AmplifierError("NF outside [3, 10] dB")

    def nf_db_at(self, f_thz: float) -> float:
        nf = self.noise_figure_db
        if isinstance(nf, (int, float)):
            return float(nf)
        nodes = sorted(nf)
        return float(np.interp(f_thz, [n[0] for n in nodes], [n[1] for n in nodes]))


def gain_db_at(config: EdfaConfig, f_thz: float) -> float:
    """Net gain at one frequency: flat target + anchored tilt + ripple - VOA."""
    if config.band_range_thz is None:
        raise AmplifierError(f"amp {config.amp_id}: band range not set")
    f_min, f_max = config.band_range_thz
    if f_thz < f_min - 1e-9 or f_thz > f_max + 1e-9:
        raise AmplifierError(
            f"frequency {f_thz} THz outside amp band [{f_min}, {f_max}] THz"
        )
    gain = config.target_gain_db
    if f_max > f_min:
        f_center = (f_min + f_max) / 2.0
        gain += config.tilt_db * (f_thz - f_center) / (f_max - f_min)
    if config.ripple_db is not None:
        gain += float(np.interp(f_thz, config.ripple_nodes_thz, config.ripple_db))
    return gain - config.voa_out_db


@dataclass(frozen=True)
class EdfaResult:
    output: PowerSpectrum
    ase_mw: np.ndarray
    clamped: bool
    gain_db: np.ndarray


def _gain_vector_db(config: EdfaConfig, grid: ChannelGrid, mask: np.ndarray) -> np.ndarray:
    freqs = grid.frequencies_thz
    gains = np.zeros(len(grid))
    for i in np.flatnonzero(mask):
        gains[i] = gain_db_at(config, float(freqs[i]))
    return gains


def _ase_vector_mw(config: EdfaConfig, grid: ChannelGrid, gain_db: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """h f NF (G-1) B_ref per channel, zero wherever linear gain <= 1."""
    freqs = grid.frequencies_thz
    ase = np.zeros(len(grid))
    for i in np.flatnonzero(mask):
        g_lin = 10.0 ** (gain_db[i] / 10.0)
        if g_lin <= 1.0:
            continue
        nf_lin = 10.0 ** (config.nf_db_at(float(freqs[i])) / 10.0)
        ase[i] = PLANCK_J_S * freqs[i] * 1e12 * nf_lin * (g_lin - 1.0) * B_REF_HZ * 1e3
    return ase


def apply_edfa(config: EdfaConfig, input_spectrum: PowerSpectrum) -> EdfaResult:
    """Amplify a spectrum with one EDFA; returns output and generated ASE.

    Every lit channel must sit inside the amp band. If the total output
    (signal plus ASE) exceeds the configured maximum the whole spectrum is
    scaled down uniformly and the clamp flag is set.
    """
    grid = input_spectrum.grid
    band_mask = grid.band_mask(config.band)
    lit = input_spectrum.lit_mask
    if np.any(lit & ~band_mask):
        bad = np.flatnonzero(lit & ~band_mask)
        raise AmplifierError(
            f"amp {config.amp_id} (band {config.band}) fed channels outside its band: "
            f"{[grid.channels[i].index for i in bad]}"
        )
    gains_db = _gain_vector_db(config, grid, band_mask)
    gains_lin = np.where(band_mask, 10.0 ** (gains_db / 10.0), 1.0)
    ase = _ase_vector_mw(config, grid, gains_db, band_mask & lit)
    out = input_spectrum.powers_mw * gains_lin + ase

    clamped = False
    total = out.sum()
    max_mw = 10.0 ** (config.max_total_output_dbm / 10.0)
    if total > max_mw:
        scale = max_mw / total
        out = out * scale
        ase = ase * scale
        clamped = True
    return EdfaResult(
        output=input_spectrum.with_powers(out),
        ase_mw=ase,
        clamped=clamped,
        gain_db=gains_db,
    )


def apply_amp_site(configs: Sequence[EdfaConfig], input_spectrum: PowerSpectrum) -> EdfaResult:
    """Apply one amplification site holding one EDFA per band.

    Per-band clamping happens inside each EDFA; the merged result reports
    clamped=True if any band clamped.
    """
    grid = input_spectrum.grid
    out = np.array(input_spectrum.powers_mw)
    ase_total = np.zeros(len(grid))
    gain_total = np.zeros(len(grid))
    clamped = False
    covered = np.zeros(len(grid), dtype=bool)
    for config in configs:
        mask = grid.band_mask(config.band)
        covered |= mask
        sub = input_spectrum.with_powers(np.where(mask, input_spectrum.powers_mw, 0.0))
        res = apply_edfa(config, sub)
        out[mask] = res.output.powers_mw[mask]
        ase_total[mask] = res.ase_mw[mask]
        gain_total[mask] = res.gain_db[mask]
        clamped = clamped or res.clamped
    uncovered_lit = input_spectrum.lit_mask & ~covered
    if np.any(uncovered_lit):
        bad = [grid.channels[i].index for i in np.flatnonzero(uncovered_lit)]
        raise AmplifierError(f"no EDFA covers lit channels {bad} at this site")
    return EdfaResult(
        output=input_spectrum.with_powers(out),
        ase_mw=ase_total,
        clamped=clamped,
        gain_db=gain_total,
    )


def ase_accumulate(
    per_stage_ase: Sequence[np.ndarray],
    downstream_transfer: Sequence[np.ndarray],
) -> np.ndarray:
    """Receiver-side ASE: each stage's contribution scaled by the product of
    everything downstream of it.

    ``downstream_transfer[k]`` is the per-channel linear net transfer from
    stage k's output to the receiver (unity for the last stage).
    """
    if len(per_stage_ase) != len(downstream_transfer):
        raise ValueError(
            f"{len(per_stage_ase)} ASE stages vs {len(downstream_transfer)} transfers"
        )
    total = None
    for ase, transfer in zip(per_stage_ase, downstream_transfer):
        term = np.asarray(ase) * np.asarray(transfer)
        total = term if total is None else total + term
    return total if total is not None else np.zeros(0)


# ---------------------------------------------------------------------------
# JSON documents


def edfa_to_document(config: EdfaConfig) -> dict:
    nf = config.noise_figure_db
    return {
        "id": config.amp_id,
        "site": config.site,
        "band": config.band,
        "gain_db": config.target_gain_db,
        "tilt_db": config.tilt_db,
        "ripple_db": list(config.ripple_db) if config.ripple_db is not None else None,
        "ripple_nodes_thz": list(config.ripple_nodes_thz) if config.ripple_nodes_thz is not None else None,
        "nf_db": nf if isinstance(nf, (int, float)) else [list(p) for p in nf],
        "band_range_thz": list(config.band_range_thz) if config.band_range_thz else None,
        "voa_out_db": config.voa_out_db,
        "max_pout_dbm": config.max_total_output_dbm,
    }


def edfa_from_document(doc: Mapping) -> EdfaConfig:
    nf = doc.get("nf_db", 5.0)
    if not isinstance(nf, (int, float)):
        nf = tuple((float(f), float(v)) for f, v in nf)
    ripple = doc.get("ripple_db")
    nodes = doc.get("ripple_nodes_thz")
    rng = doc.get("band_range_thz")
    return EdfaConfig(
        amp_id=str(doc["id"]),
        site=str(doc.get("site", "")),
        band=str(doc.get("band", "CL")),
        target_gain_db=float(doc["gain_db"]),
        tilt_db=float(doc.get("tilt_db", 0.0)),
        ripple_db=tuple(float(r) for r in ripple) if ripple is not None else None,
        ripple_nodes_thz=tuple(float(n) for n in nodes) if nodes is not None else None,
        noise_figure_db=nf,
        band_range_thz=(float(rng[0]), float(rng[1])) if rng else None,
        max_total_output_dbm=float(doc.get("max_pout_dbm", 23.0)),
        voa_out_db=float(doc.get("voa_out_db", 0.0)),
    )
