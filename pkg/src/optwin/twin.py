"""End-to-end QoT prediction, telemetry ingestion and BER mapping.

The twin walks every link of a network state with the span/amplifier physics,
tracking per-channel signal, accumulated ASE and accumulated NLI. ROADM
traversals are modelled as the fixed insertion loss compensated by one
logical EDFA per band plus per-channel levelling to the next link's launch
power, which attenuates signal and riding noise by the same factor and
therefore never changes a channel's GSNR.

Observable conventions: an OCM or power monitor reads total power, i.e.
signal plus riding ASE and NLI; span OCM taps sit before the input connector
(z0) and after the output connector (zmax), bracketing every amplifier.
"""
from __future__ import annotations

import json
import math
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import erfc, erfcinv
from scipy.stats import gaussian_kde

from .amplifier import B_REF_HZ, PLANCK_J_S, EdfaConfig, apply_amp_site
from .fiber import PropagationOptions, SpanParams, nli_for_span, propagate
from .presets import NF_DB
from .spectral import PowerSpectrum, dbm_array, from_dbm, spectrum_to_document, to_dbm
from .topology import Lightpath, Link, NetworkState, TopologyError


class PredictionError(RuntimeError):
    pass


class LightpathDownError(PredictionError):
    pass


# ---------------------------------------------------------------------------
# Launch composition


def link_launch_spectrum(state: NetworkState, link: Link) -> PowerSpectrum:
    """Per-channel launch at the link head under the current loading.

    Channels are lit by lightpaths whose route crosses the link, levelled to
    the link's nominal launch power; transmitter drops and upstream fiber
    cuts darken them.
    """
    grid = state.network.grid
    pos_of = {ch.index: i for i, ch in enumerate(grid.channels)}
    powers = np.zeros(len(grid))
    occupancy = ["dark"] * len(grid)
    p_mw = from_dbm(link.launch_power_dbm)
    for lp in state.lightpaths:
        links = state.route_links(lp.route)
        for pos, l in enumerate(links):
            if l.link_id != link.link_id:
                continue
            upstream_failed = any(
                s.span_id in state.failed_spans
                for upstream in links[:pos]
                for s in upstream.spans
            )
            if upstream_failed:
                continue
            for ch in lp.channel_indices:
                if (lp.lightpath_id, ch) in state.transmit_drops:
                    continue
                powers[pos_of[ch]] = p_mw
                occupancy[pos_of[ch]] = lp.occupancy
    return PowerSpectrum(grid, powers, occupancy)


def node_ase_vector(state: NetworkState) -> np.ndarray:
    """ASE (mW per channel) added by one ROADM traversal: a per-band EDFA
    compensating the insertion loss, at default noise figures."""
    grid = state.network.grid
    gain_lin = 10.0 ** (state.network.roadm_loss_db / 10.0)
    ase = np.zeros(len(grid))
    for i, ch in enumerate(grid.channels):
        nf_lin = 10.0 ** (NF_DB[ch.band] / 10.0)
        ase[i] = PLANCK_J_S * ch.center_frequency_thz * 1e12 * nf_lin * (gain_lin - 1.0) * B_REF_HZ * 1e3
    return ase


# ---------------------------------------------------------------------------
# Link walking


@dataclass(frozen=True)
class StageRecord:
    kind: str  # "span" | "amp_site"
    stage_id: str
    #: observable total-power spectra (mW arrays) at the stage taps
    taps: dict


@dataclass(frozen=True)
class LinkTrace:
    link_id: str
    launch: PowerSpectrum
    signal_out: np.ndarray
    #: ASE generated within this link, referenced to the link end
    ase_out: np.ndarray
    #: NLI generated within this link, referenced to the link end
    nli_out: np.ndarray
    #: noise that entered the link head, transferred to the link end
    ride_out: np.ndarray
    #: per-channel linear transfer launch -> link end (0 for dark channels)
    total_transfer: np.ndarray
    stages: tuple[StageRecord, ...]
    #: ("ase"|"nli", stage_id, per-channel mW referenced to link end)
    contributions: tuple[tuple[str, str, np.ndarray], ...]
    clamped_amps: tuple[str, ...]


def _walk_core(
    state: NetworkState,
    link: Link,
    s0: np.ndarray,
    a0: np.ndarray,
    n0: np.ndarray,
    step_km: float,
    srs_enabled: bool,
    first_span: int = 0,
):
    """Lean span/amp loop for optimisation inner evaluations.

    Returns final (S, A, N) plus the (S, A, N) snapshot taken before each
    span, which lets callers resume from a cached prefix.
    """
    grid = state.network.grid
    s, a, n = s0.copy(), a0.copy(), n0.copy()
    boundaries = []
    opts = PropagationOptions(step_km=step_km, sample_every_km=0.0, srs_enabled=srs_enabled)
    for idx in range(first_span, len(link.spans)):
        boundaries.append((s.copy(), a.copy(), n.copy()))
        span = link.spans[idx]
        spec_in = PowerSpectrum(grid, s)
        if span.span_id in state.failed_spans or spec_in.total_mw() == 0.0:
            s = np.zeros_like(s)
            a = np.zeros_like(a)
            n = np.zeros_like(n)
            continue
        prop = propagate(span, spec_in, opts)
        out = prop.output.powers_mw
        transfer = np.where(s > 0, out / np.where(s > 0, s, 1.0), 0.0)
        nli_add = nli_for_span(span, spec_in, prop)
        a = a * transfer
        n = n * transfer + nli_add
        s = out
        res = apply_amp_site(state.site_configs(link, idx), PowerSpectrum(grid, s))
        amp_transfer = np.where(
            s > 0, (res.output.powers_mw - res.ase_mw) / np.where(s > 0, s, 1.0), 0.0
        )
        s = s * amp_transfer
        a = a * amp_transfer + res.ase_mw
        n = n * amp_transfer
    return s, a, n, boundaries


def walk_link(
    state: NetworkState,
    link: Link,
    launch: PowerSpectrum,
    ride_in: np.ndarray | None = None,
    *,
    step_km: float = 0.1,
    srs_enabled: bool = True,
    sample_every_km: float = 0.0,
) -> LinkTrace:
    """Full link walk with observable taps and a per-stage noise ledger.

    ``ride_in`` is noise (ASE+NLI) already riding on the express channels at
    the link head; it shapes the observable taps and is transferred to the
    link end, but stays separate from the link's own generated-noise outputs.
    """
    grid = state.network.grid
    nch = len(grid)
    s = np.array(launch.powers_mw)
    ride = np.zeros(nch) if ride_in is None else ride_in.copy()
    a = np.zeros(nch)
    n = np.zeros(nch)
    opts = PropagationOptions(step_km=step_km, sample_every_km=sample_every_km, srs_enabled=srs_enabled)

    stages: list[StageRecord] = []
    ledger: list[tuple[str, str, np.ndarray]] = []
    clamped: list[str] = []

    def scale_ledger(transfer: np.ndarray) -> None:
        for i, (kind, sid, arr) in enumerate(ledger):
            ledger[i] = (kind, sid, arr * transfer)

    for idx, span in enumerate(link.spans):
        ocm_z0 = s + ride + a + n
        failed = span.span_id in state.failed_spans
        if failed or s.sum() == 0.0:
            transfer = np.zeros(nch)
            nli_add = np.zeros(nch)
            s_next = np.zeros(nch)
        else:
            prop = propagate(span, PowerSpectrum(grid, s), opts)
            s_next = prop.output.powers_mw
            transfer = np.where(s > 0, s_next / np.where(s > 0, s, 1.0), 0.0)
            nli_add = nli_for_span(span, PowerSpectrum(grid, s), prop)
        ride = ride * transfer
        a = a * transfer
        n = n * transfer
        scale_ledger(transfer)
        n = n + nli_add
        ledger.append(("nli", span.span_id, nli_add.copy()))
        s = s_next
        stages.append(
            StageRecord(
                kind="span",
                stage_id=span.span_id,
                taps={"ocm_z0": ocm_z0, "ocm_zmax": s + ride + a + n, "failed": failed},
            )
        )

        site_cfgs = state.site_configs(link, idx)
        res = apply_amp_site(site_cfgs, PowerSpectrum(grid, s))
        amp_transfer = np.where(
            s > 0, (res.output.powers_mw - res.ase_mw) / np.where(s > 0, s, 1.0), 0.0
        )
        s_in_amp_total = s + ride + a + n
        s = s * amp_transfer
        ride = ride * amp_transfer
        a = a * amp_transfer + res.ase_mw
        n = n * amp_transfer
        scale_ledger(amp_transfer)
        site_id = f"{link.link_id}:site{idx}"
        ledger.append(("ase", site_id, res.ase_mw.copy()))
        if res.clamped:
            clamped.append(site_id)
        band_totals_in = {}
        band_totals_out = {}
        for cfg in site_cfgs:
            mask = grid.band_mask(cfg.band)
            band_totals_in[cfg.amp_id] = float(s_in_amp_total[mask].sum())
            band_totals_out[cfg.amp_id] = float((s + ride + a + n)[mask].sum())
        stages.append(
            StageRecord(
                kind="amp_site",
                stage_id=site_id,
                taps={
                    "input_total_mw": band_totals_in,
                    "output_total_mw": band_totals_out,
                    "output": s + ride + a + n,
                    "amp_ids": tuple(cfg.amp_id for cfg in site_cfgs),
                },
            )
        )

    total_transfer = np.where(
        launch.powers_mw > 0,
        s / np.where(launch.powers_mw > 0, launch.powers_mw, 1.0),
        0.0,
    )
    return LinkTrace(
        link_id=link.link_id,
        launch=launch,
        signal_out=s,
        ase_out=a,
        nli_out=n,
        ride_out=ride,
        total_transfer=total_transfer,
        stages=tuple(stages),
        contributions=tuple(ledger),
        clamped_amps=tuple(clamped),
    )


# ---------------------------------------------------------------------------
# Network evaluation


@dataclass(frozen=True)
class QotEstimate:
    """Per-channel GSNR decomposition at the receiver of one lightpath."""

    lightpath_id: str
    channel_indices: tuple[int, ...]
    signal_mw: dict
    ase_mw: dict
    nli_mw: dict
    gsnr_db: dict
    min_gsnr_db: float
    mean_gsnr_db: float
    #: (stage_id, kind, {channel: mw at receiver})
    per_stage: tuple[tuple[str, str, dict], ...]

    def gsnr_for(self, channel: int) -> float:
        return self.gsnr_db[channel]


@dataclass(frozen=True)
class NetworkEvaluation:
    traces: dict
    lightpath_qot: dict
    #: {(link_id, span_id, "z0"|"zmax"): powers mW array}
    ocm: dict
    #: {amp_id: powers mW array} at amp outputs
    amp_output: dict
    #: {amp_id: total mW} at amp inputs, per band amp
    amp_input_total: dict


def _resolve_walk_order(state: NetworkState) -> list[Link]:
    """Links ordered so that every lightpath sees its upstream links first."""
    remaining = {l.link_id: l for l in state.network.links}
    deps: dict[str, set[str]] = {lid: set() for lid in remaining}
    for lp in state.lightpaths:
        links = state.route_links(lp.route)
        for prev, cur in zip(links, links[1:]):
            deps[cur.link_id].add(prev.link_id)
    ordered: list[Link] = []
    while remaining:
        ready = sorted(
            lid for lid, l in remaining.items() if not (deps[lid] & set(remaining))
        )
        if not ready:
            raise PredictionError(f"cyclic lightpath routing over links {sorted(remaining)}")
        for lid in ready:
            ordered.append(remaining.pop(lid))
    return ordered


def evaluate_network(
    state: NetworkState,
    *,
    step_km: float = 0.1,
    srs_enabled: bool = True,
) -> NetworkEvaluation:
    """Walk every link once and assemble per-lightpath QoT plus observables."""
    grid = state.network.grid
    nch = len(grid)
    pos_of = {ch.index: i for i, ch in enumerate(grid.channels)}
    node_ase = node_ase_vector(state)

    ride_in = {l.link_id: np.zeros(nch) for l in state.network.links}
    traces: dict[str, LinkTrace] = {}

    for link in _resolve_walk_order(state):
        launch = link_launch_spectrum(state, link)
        trace = walk_link(
            state, link, launch, ride_in[link.link_id],
            step_km=step_km, srs_enabled=srs_enabled,
        )
        traces[link.link_id] = trace
        # hand noise across ROADM traversals to downstream links
        for lp in state.lightpaths:
            links = state.route_links(lp.route)
            for pos, l in enumerate(links[:-1]):
                if l.link_id != link.link_id:
                    continue
                nxt = links[pos + 1]
                launch_next_mw = from_dbm(nxt.launch_power_dbm)
                for ch in lp.channel_indices:
                    i = pos_of[ch]
                    s_out = trace.signal_out[i]
                    if s_out <= 0:
                        continue
                    g_level = launch_next_mw / s_out
                    total_noise = trace.ride_out[i] + trace.ase_out[i] + trace.nli_out[i]
                    ride_in[nxt.link_id][i] = total_noise * g_level + node_ase[i]

    qot = {}
    for lp in state.lightpaths:
        try:
            qot[lp.lightpath_id] = _compose_lightpath_qot(
                state, lp, traces, node_ase, pos_of
            )
        except LightpathDownError:
            continue

    ocm = {}
    amp_output = {}
    amp_input_total = {}
    for link in state.network.links:
        trace = traces[link.link_id]
        for rec in trace.stages:
            if rec.kind == "span":
                ocm[(link.link_id, rec.stage_id, "z0")] = rec.taps["ocm_z0"]
                ocm[(link.link_id, rec.stage_id, "zmax")] = rec.taps["ocm_zmax"]
            else:
                for amp_id in rec.taps["amp_ids"]:
                    amp_output[amp_id] = rec.taps["output"]
                    amp_input_total[amp_id] = rec.taps["input_total_mw"][amp_id]
    return NetworkEvaluation(
        traces=traces,
        lightpath_qot=qot,
        ocm=ocm,
        amp_output=amp_output,
        amp_input_total=amp_input_total,
    )


def _compose_lightpath_qot(state, lp: Lightpath, traces, node_ase, pos_of) -> QotEstimate:
    if state.lightpath_status(lp.lightpath_id) == "down":
        raise LightpathDownError(f"lightpath {lp.lightpath_id} is down")
    idx = np.array(sorted(pos_of[ch] for ch in lp.channel_indices))
    channels = tuple(sorted(lp.channel_indices))

    if len(lp.route) == 1:
        # back-to-back: one add/drop traversal, noise floor set by the node amp
        s = np.full(len(idx), from_dbm(0.0))
        a = node_ase[idx]
        n = np.zeros(len(idx))
        stages = [(f"{lp.route[0]}:node", "ase", dict(zip(channels, a)))]
        return _finish_qot(lp, channels, s, a, n, stages)

    links = state.route_links(lp.route)
    a = np.zeros(len(idx))
    n = np.zeros(len(idx))
    s = None
    stage_accum: list[tuple[str, str, np.ndarray]] = []
    for pos, link in enumerate(links):
        trace = traces[link.link_id]
        launch_mw = from_dbm(link.launch_power_dbm)
        if pos > 0:
            g_level = np.where(s > 0, launch_mw / np.where(s > 0, s, 1.0), 0.0)
            a = a * g_level + node_ase[idx]
            n = n * g_level
            stage_accum = [(sid, kind, arr * g_level) for sid, kind, arr in stage_accum]
            stage_accum.append((f"{lp.route[pos]}:node", "ase", node_ase[idx].copy()))
        transfer = trace.total_transfer[idx]
        a = a * transfer + trace.ase_out[idx]
        n = n * transfer + trace.nli_out[idx]
        stage_accum = [(sid, kind, arr * transfer) for sid, kind, arr in stage_accum]
        for kind, sid, arr in trace.contributions:
            stage_accum.append((sid, kind, arr[idx].copy()))
        s = trace.signal_out[idx]
    if s is None or np.any(s <= 0):
        raise LightpathDownError(f"lightpath {lp.lightpath_id} has dark channels at RX")
    stages = [(sid, kind, dict(zip(channels, arr))) for sid, kind, arr in stage_accum]
    return _finish_qot(lp, channels, s, a, n, stages)


def _finish_qot(lp, channels, s, a, n, stages) -> QotEstimate:
    gsnr = 10.0 * np.log10(s / (a + n))
    return QotEstimate(
        lightpath_id=lp.lightpath_id,
        channel_indices=channels,
        signal_mw=dict(zip(channels, s)),
        ase_mw=dict(zip(channels, a)),
        nli_mw=dict(zip(channels, n)),
        gsnr_db=dict(zip(channels, gsnr)),
        min_gsnr_db=float(gsnr.min()),
        mean_gsnr_db=float(gsnr.mean()),
        per_stage=tuple(stages),
    )


def predict_qot(
    state: NetworkState,
    lightpath: Lightpath | str,
    *,
    step_km: float = 0.1,
    srs_enabled: bool = True,
    evaluation: NetworkEvaluation | None = None,
) -> QotEstimate:
    """QoT of one routed lightpath; deterministic in the network state."""
    lp = state.lightpath(lightpath) if isinstance(lightpath, str) else lightpath
    if state.lightpath_status(lp.lightpath_id) == "down":
        raise LightpathDownError(f"lightpath {lp.lightpath_id} is down (failed span on route)")
    ev = evaluation or evaluate_network(state, step_km=step_km, srs_enabled=srs_enabled)
    try:
        return ev.lightpath_qot[lp.lightpath_id]
    except KeyError as exc:
        raise PredictionError(f"no QoT computed for {lp.lightpath_id}") from exc


# ---------------------------------------------------------------------------
# BER <-> GSNR


#: PCS-16QAM is mapped onto the 16QAM curve shifted by this configurable
#: offset; a stand-in for the proprietary transponder curve.
PCS16QAM_OFFSET_DB = 0.8

SUPPORTED_MODULATIONS = ("QPSK", "16QAM", "PCS16QAM")


def ber_from_gsnr(gsnr_db: float, modulation: str, pcs_offset_db: float = PCS16QAM_OFFSET_DB) -> float:
    """Pre-FEC BER from GSNR under textbook AWGN formulas.

    QPSK: 0.5 erfc(sqrt(snr/2)); 16QAM: (3/8) erfc(sqrt(snr/10)).
    """
    if modulation == "PCS16QAM":
        return ber_from_gsnr(gsnr_db - pcs_offset_db, "16QAM")
    snr = 10.0 ** (gsnr_db / 10.0)
    if modulation == "QPSK":
        return float(0.5 * erfc(math.sqrt(snr / 2.0)))
    if modulation == "16QAM":
        return float((3.0 / 8.0) * erfc(math.sqrt(snr / 10.0)))
    raise ValueError(f"unsupported modulation {modulation!r}")


def gsnr_from_ber(ber: float, modulation: str, pcs_offset_db: float = PCS16QAM_OFFSET_DB) -> float:
    """Inverse of :func:`ber_from_gsnr`; strictly decreasing in BER."""
    if not 0.0 < ber < 0.5:
        raise ValueError(f"BER {ber} outside (0, 0.5)")
    if modulation == "PCS16QAM":
        return gsnr_from_ber(ber, "16QAM") + pcs_offset_db
    if modulation == "QPSK":
        snr = 2.0 * float(erfcinv(2.0 * ber)) ** 2
    elif modulation == "16QAM":
        snr = 10.0 * float(erfcinv(8.0 * ber / 3.0)) ** 2
    else:
        raise ValueError(f"unsupported modulation {modulation!r}")
    if snr <= 0:
        raise ValueError(f"BER {ber} maps to non-positive SNR for {modulation}")
    return 10.0 * math.log10(snr)


# ---------------------------------------------------------------------------
# Prediction error reporting


@dataclass(frozen=True)
class ErrorReport:
    channels: tuple[int, ...]
    errors_db: tuple[float, ...]
    mean_db: float
    mean_abs_db: float
    variance_db2: float
    kde_grid_db: tuple[float, ...] | None
    kde_density: tuple[float, ...] | None


def error_report(
    predicted: Mapping[int, float], measured: Mapping[int, float]
) -> ErrorReport:
    """Signed prediction errors (predicted - measured, positive = aggressive)
    with mean, variance and a Gaussian-KDE summary on a fixed grid."""
    channels = tuple(sorted(set(predicted) & set(measured)))
    if not channels:
        raise ValueError("no overlapping channels between predictions and measurements")
    errors = np.array([predicted[ch] - measured[ch] for ch in channels])
    mean = float(errors.mean())
    variance = float(errors.var())
    kde_grid = kde_density = None
    if len(errors) >= 2 and variance > 1e-12:
        grid = np.arange(-5.0, 5.0 + 1e-9, 0.05)
        kde = gaussian_kde(errors, bw_method="scott")
        kde_grid = tuple(float(x) for x in grid)
        kde_density = tuple(float(d) for d in kde(grid))
    return ErrorReport(
        channels=channels,
        errors_db=tuple(float(e) for e in errors),
        mean_db=mean,
        mean_abs_db=float(np.abs(errors).mean()),
        variance_db2=variance,
        kde_grid_db=kde_grid,
        kde_density=kde_density,
    )


# ---------------------------------------------------------------------------
# Telemetry


TELEMETRY_SOURCES = ("ocm", "amp_total_power", "transponder")


@dataclass(frozen=True)
class TelemetryRecord:
    t: int
    source: str
    #: {"link","span","z"} for span OCMs, {"amp"} for amp taps,
    #: {"lightpath","channel"} for transponders
    location: tuple[tuple[str, object], ...]
    payload: tuple[tuple[str, object], ...]

    def __post_init__(self):
        if self.source not in TELEMETRY_SOURCES:
            raise ValueError(f"unknown telemetry source {self.source!r}")
        payload = dict(self.payload)
        if self.source == "ocm" and "spectrum" not in payload:
            raise ValueError("ocm record needs a spectrum payload")
        if self.source == "amp_total_power" and "total_dbm" not in payload:
            raise ValueError("amp_total_power record needs total_dbm")
        if self.source == "transponder" and "pre_fec_ber" not in payload:
            raise ValueError("transponder record needs pre_fec_ber")

    @property
    def location_map(self) -> dict:
        return dict(self.location)

    @property
    def payload_map(self) -> dict:
        return dict(self.payload)

    def location_key(self) -> str:
        return "/".join(f"{k}={v}" for k, v in sorted(self.location))


def make_record(t: int, source: str, location: Mapping, payload: Mapping) -> TelemetryRecord:
    def freeze(m: Mapping):
        out = []
        for k in sorted(m):
            v = m[k]
            if isinstance(v, list):
                v = tuple(tuple(sorted(r.items())) if isinstance(r, dict) else r for r in v)
            out.append((k, v))
        return tuple(out)

    return TelemetryRecord(t=int(t), source=source, location=freeze(location), payload=freeze(payload))


def record_to_json(record: TelemetryRecord) -> dict:
    def thaw(x):
        if isinstance(x, tuple) and x and all(isinstance(e, tuple) and len(e) == 2 for e in x):
            return {k: thaw(v) for k, v in x}
        if isinstance(x, tuple):
            return [thaw(e) for e in x]
        return x

    return {
        "t": record.t,
        "source": record.source,
        "location": thaw(record.location),
        "payload": thaw(record.payload),
    }


def record_from_json(doc: Mapping) -> TelemetryRecord:
    return make_record(doc["t"], doc["source"], doc["location"], doc["payload"])


def write_ndjson(records: Iterable[TelemetryRecord], path) -> None:
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_json(rec), sort_keys=True) + "\n")


def read_ndjson(path) -> list[TelemetryRecord]:
    records = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(record_from_json(json.loads(line)))
    return records


def spectrum_payload_lit_count(payload: Mapping) -> int:
    return sum(1 for row in payload["spectrum"] if dict(row).get("power_dbm") is not None)


@dataclass(frozen=True)
class Alarm:
    kind: str  # "loss_of_power" | "channel_drop"
    location_key: str
    t: int
    details: tuple[tuple[str, object], ...]

    @property
    def details_map(self) -> dict:
        return dict(self.details)


@dataclass
class IngestResult:
    accepted: bool
    reason: str = ""
    alarms: tuple[Alarm, ...] = ()


LOSS_OF_POWER_FLOOR_DBM = -30.0


class TwinRuntime:
    """Single-writer telemetry front end of the twin.

    Keeps ring buffers per telemetry location, rejects stale timestamps and
    raises alarms on loss of power or on lit-channel count dropping below
    the location's baseline.
    """

    def __init__(self, state: NetworkState, buffer_size: int = 256):
        self.state = state
        self.buffers: dict[str, deque] = {}
        self.baseline_lit: dict[str, int] = {}
        self.baseline_total_dbm: dict[str, float] = {}
        self.last_t: dict[str, int] = {}
        self.alarm_log: list[Alarm] = []
        self.rejected: list[tuple[TelemetryRecord, str]] = []
        self._buffer_size = buffer_size

    def rebaseline(self) -> None:
        """Accept the latest readings as the new reference loading."""
        self.baseline_lit.clear()
        self.baseline_total_dbm.clear()

    def ingest(self, record: TelemetryRecord) -> IngestResult:
        key = f"{record.source}/{record.location_key()}"
        if key in self.last_t and record.t <= self.last_t[key]:
            self.rejected.append((record, "stale timestamp"))
            return IngestResult(accepted=False, reason="stale timestamp")
        self.last_t[key] = record.t
        self.buffers.setdefault(key, deque(maxlen=self._buffer_size)).append(record)

        alarms: list[Alarm] = []
        payload = record.payload_map
        if record.source == "amp_total_power":
            raw = payload["total_dbm"]
            total = -math.inf if raw is None else float(raw)
            baseline = self.baseline_total_dbm.get(key)
            if baseline is None:
                self.baseline_total_dbm[key] = total
            elif total < LOSS_OF_POWER_FLOOR_DBM <= baseline:
                alarms.append(
                    Alarm(
                        kind="loss_of_power",
                        location_key=record.location_key(),
                        t=record.t,
                        details=(("total_dbm", None if total == -math.inf else total),),
                    )
                )
        elif record.source == "ocm":
            lit = spectrum_payload_lit_count(payload)
            baseline = self.baseline_lit.get(key)
            if baseline is None:
                self.baseline_lit[key] = lit
            elif lit < baseline:
                missing = _missing_channels(self.buffers[key], payload)
                alarms.append(
                    Alarm(
                        kind="channel_drop",
                        location_key=record.location_key(),
                        t=record.t,
                        details=(
                            ("count", baseline - lit),
                            ("missing", tuple(missing)),
                        ),
                    )
                )
        self.alarm_log.extend(alarms)
        return IngestResult(accepted=True, alarms=tuple(alarms))


def _missing_channels(buffer: deque, current_payload: Mapping) -> list[int]:
    """Channels lit in the location's first buffered record but dark now."""
    first = buffer[0].payload_map
    lit_then = {
        dict(row)["index"] for row in first["spectrum"] if dict(row).get("power_dbm") is not None
    }
    lit_now = {
        dict(row)["index"]
        for row in current_payload["spectrum"]
        if dict(row).get("power_dbm") is not None
    }
    return sorted(lit_then - lit_now)
