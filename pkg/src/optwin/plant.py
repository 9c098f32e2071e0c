"""Ground-truth plant: the same physics engine as the twin, run with hidden,
seeded parameter perturbations and noisy measurement taps.

The agent side never reads plant parameters; it only sees TelemetryRecords
from ``measure``/``monitor_records`` and can change the plant through
``inject`` (scenario events) and the deploy entry points, which copy only
the commanded amplifier fields (gain, tilt, VOA) and routing, never the
hidden ripple or noise figures. Truth accessors (``true_qot`` etc.) exist
for scoring and reports, not for control.
"""
from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, replace
from typing import Mapping, Sequence

import numpy as np

from .amplifier import EdfaConfig
from .spectral import PowerSpectrum, dbm_array, spectrum_to_document, to_dbm
from .topology import (
    Lightpath,
    NetworkState,
    TopologyError,
    apply_switch,
    clear_failure,
    fail_span,
)
from .twin import (
    NetworkEvaluation,
    TelemetryRecord,
    ber_from_gsnr,
    evaluate_network,
    make_record,
)


@dataclass(frozen=True)
class PerturbationSpec:
    """Parameter shifts applied to the nominal topology, uniform/normal and
    seeded: excess output-connector loss, Raman strength multiplier, and
    per-channel amplifier ripple."""

    connector_loss_low_db: float = -0.5
    connector_loss_high_db: float = 1.5
    raman_scale_low: float = 0.8
    raman_scale_high: float = 1.3
    ripple_sigma_db: float = 0.3

    def __post_init__(self):
        if self.connector_loss_low_db > self.connector_loss_high_db:
            raise ValueError("connector loss bounds inverted")
        if not 0.2 <= self.raman_scale_low <= self.raman_scale_high <= 5.0:
            raise ValueError("raman scale bounds outside [0.2, 5]")
        if self.ripple_sigma_db < 0 or self.ripple_sigma_db > 1.0:
            raise ValueError("ripple sigma outside [0, 1] dB")


ZERO_PERTURBATION = PerturbationSpec(0.0, 0.0, 1.0, 1.0, 0.0)


@dataclass(frozen=True)
class NoiseSpec:
    ocm_sigma_db: float = 0.1
    ber_sigma_rel: float = 0.05


class PlantError(RuntimeError):
    pass


class Plant:
    """Hidden-parameter network simulator with seeded measurement noise."""

    #: integration step for the plant's internal evaluations
    STEP_KM = 0.5

    def __init__(self, state: NetworkState, noise: NoiseSpec, seed: int):
        self._state = state
        self.noise = noise
        self.seed = int(seed)
        self.tick = 0
        self._version = 0
        self._cache: tuple[int, NetworkEvaluation] | None = None
        self.event_log: list[dict] = []

    # -- time ---------------------------------------------------------------

    def advance(self, tick: int) -> None:
        if tick < self.tick:
            raise PlantError(f"tick must be monotone ({tick} < {self.tick})")
        self.tick = tick

    # -- internal -------------------------------------------------------------

    def _evaluation(self) -> NetworkEvaluation:
        if self._cache is None or self._cache[0] != self._version:
            self._cache = (
                self._version,
                evaluate_network(self._state, step_km=self.STEP_KM),
            )
        return self._cache[1]

    def _rng(self, probe_key: str) -> np.random.Generator:
        return np.random.default_rng(
            [self.seed, zlib.crc32(probe_key.encode()), self.tick]
        )

    def _mutate(self, state: NetworkState) -> None:
        self._state = state
        self._version += 1

    # -- events ---------------------------------------------------------------

    def inject(self, event_type: str, args: Mapping) -> None:
        """Apply a physical scenario event to the plant."""
        if event_type == "drop_channels":
            channels = [int(c) for c in args["channels"]]
            only_lp = args.get("lightpath")
            drops = set(self._state.transmit_drops)
            for ch in channels:
                owners = [
                    lp
                    for lp in self._state.lightpaths
                    if ch in lp.channel_indices
                    and (only_lp is None or lp.lightpath_id == only_lp)
                ]
                if not owners:
                    raise PlantError(f"channel {ch} is not transmitted by any lightpath")
                for lp in owners:
                    pair = (lp.lightpath_id, ch)
                    if pair in drops:
                        self.event_log.append(
                            {"t": self.tick, "warning": f"channel {ch} already dark"}
                        )
                    drops.add(pair)
            self._mutate(replace(self._state, transmit_drops=frozenset(drops)))
        elif event_type == "fiber_cut":
            self._mutate(fail_span(self._state, str(args["span"])))
        elif event_type == "restore":
            if "span" in args:
                self._mutate(clear_failure(self._state, str(args["span"])))
            elif "channels" in args:
                channels = {int(c) for c in args["channels"]}
                drops = frozenset(
                    (lp, ch) for lp, ch in self._state.transmit_drops if ch not in channels
                )
                self._mutate(replace(self._state, transmit_drops=drops))
            else:
                raise PlantError("restore needs a span or channels argument")
        else:
            raise PlantError(f"unknown plant event {event_type!r}")
        self.event_log.append({"t": self.tick, "event": event_type, "args": dict(args)})

    # -- deployment (commanded fields only) -----------------------------------

    def deploy_edfa_configs(self, configs: Sequence[EdfaConfig]) -> None:
        state = self._state
        for cfg in configs:
            current = state.amp_config(cfg.amp_id)
            commanded = replace(
                current,
                target_gain_db=cfg.target_gain_db,
                tilt_db=cfg.tilt_db,
                voa_out_db=cfg.voa_out_db,
            )
            state = state.with_override(commanded)
        self._mutate(state)
        self.event_log.append({"t": self.tick, "deploy": "edfa_configs", "count": len(configs)})

    def deploy_switch(self, lightpath_ids: Sequence[str], new_route: Sequence[str]) -> None:
        self._mutate(apply_switch(self._state, lightpath_ids, new_route))
        self.event_log.append(
            {"t": self.tick, "deploy": "switch", "lightpaths": list(lightpath_ids)}
        )

    def deploy_provision(self, lightpath: Lightpath) -> None:
        self._mutate(
            self._state.with_lightpaths(self._state.lightpaths + (lightpath,))
        )
        self.event_log.append({"t": self.tick, "deploy": "provision", "id": lightpath.lightpath_id})

    # -- measurement ------------------------------------------------------------

    def _noisy_spectrum_payload(self, powers_mw: np.ndarray, probe_key: str) -> dict:
        grid = self._state.network.grid
        rng = self._rng(probe_key)
        noisy = np.array(powers_mw, dtype=float)
        lit = noisy > 0
        if self.noise.ocm_sigma_db > 0 and lit.any():
            db = dbm_array(noisy[lit]) + rng.normal(0.0, self.noise.ocm_sigma_db, int(lit.sum()))
            noisy[lit] = 10.0 ** (db / 10.0)
        spectrum = PowerSpectrum(grid, noisy)
        return {"spectrum": spectrum_to_document(spectrum)}

    def measure_ocm(self, link_id: str, span_id: str, z: str) -> TelemetryRecord:
        if z not in ("z0", "zmax"):
            raise PlantError(f"OCM tap must be z0 or zmax, got {z!r}")
        ev = self._evaluation()
        try:
            powers = ev.ocm[(link_id, span_id, z)]
        except KeyError as exc:
            raise PlantError(f"no OCM tap at {link_id}/{span_id}/{z}") from exc
        payload = self._noisy_spectrum_payload(powers, f"ocm/{link_id}/{span_id}/{z}")
        return make_record(
            self.tick, "ocm", {"link": link_id, "span": span_id, "z": z}, payload
        )

    def measure_amp_ocm(self, amp_id: str) -> TelemetryRecord:
        ev = self._evaluation()
        try:
            powers = ev.amp_output[amp_id]
        except KeyError as exc:
            raise PlantError(f"no amp tap {amp_id}") from exc
        payload = self._noisy_spectrum_payload(powers, f"ampocm/{amp_id}")
        return make_record(self.tick, "ocm", {"amp": amp_id}, payload)

    def measure_amp_total(self, amp_id: str) -> TelemetryRecord:
        ev = self._evaluation()
        try:
            total_mw = ev.amp_input_total[amp_id]
        except KeyError as exc:
            raise PlantError(f"no amp tap {amp_id}") from exc
        if total_mw <= 0:
            total_dbm = None
        else:
            total_dbm = to_dbm(total_mw)
            if self.noise.ocm_sigma_db > 0:
                total_dbm += float(
                    self._rng(f"amptotal/{amp_id}").normal(0.0, self.noise.ocm_sigma_db)
                )
        return make_record(
            self.tick, "amp_total_power", {"amp": amp_id}, {"total_dbm": total_dbm}
        )

    def measure_transponder(self, lightpath_id: str, channel: int) -> TelemetryRecord:
        lp = self._state.lightpath(lightpath_id)
        if channel not in lp.channel_indices:
            raise PlantError(f"channel {channel} not on lightpath {lightpath_id}")
        gsnr = self.true_qot(lightpath_id).gsnr_db[channel]
        ber = ber_from_gsnr(gsnr, lp.modulation)
        if self.noise.ber_sigma_rel > 0:
            rel = float(
                self._rng(f"ber/{lightpath_id}/{channel}").normal(0.0, self.noise.ber_sigma_rel)
            )
            ber = float(np.clip(ber * (1.0 + rel), 1e-15, 0.499))
        return make_record(
            self.tick,
            "transponder",
            {"lightpath": lightpath_id, "channel": channel},
            {"pre_fec_ber": ber, "channel": channel},
        )

    # -- measurement sweeps -----------------------------------------------------

    def monitor_records(self) -> list[TelemetryRecord]:
        """The continuous feed: per-amp input totals plus one receive-side
        OCM per link (at the last amplifier output)."""
        records = []
        for link in self._state.network.links:
            for site in link.amp_sites:
                for amp in site:
                    records.append(self.measure_amp_total(amp.amp_id))
            for amp in link.amp_sites[-1]:
                records.append(self.measure_amp_ocm(amp.amp_id))
        return records

    def calibration_sweep(self) -> list[TelemetryRecord]:
        """Full OCM coverage: both taps of every span plus the last-site amp
        outputs, enough to bracket every amplifier."""
        records = []
        for link in self._state.network.links:
            for span in link.spans:
                records.append(self.measure_ocm(link.link_id, span.span_id, "z0"))
                records.append(self.measure_ocm(link.link_id, span.span_id, "zmax"))
            for amp in link.amp_sites[-1]:
                records.append(self.measure_amp_ocm(amp.amp_id))
        return records

    def totals_sweep(self) -> list[TelemetryRecord]:
        """Coarse telemetry: per-amp input totals only."""
        records = []
        for link in self._state.network.links:
            for site in link.amp_sites:
                for amp in site:
                    records.append(self.measure_amp_total(amp.amp_id))
        return records

    # -- truth accessors (scoring only) ------------------------------------------

    def true_qot(self, lightpath_id: str):
        ev = self._evaluation()
        try:
            return ev.lightpath_qot[lightpath_id]
        except KeyError as exc:
            raise PlantError(f"lightpath {lightpath_id} has no QoT (down?)") from exc

    def true_rx_powers(self, link_id: str) -> np.ndarray:
        trace = self._evaluation().traces[link_id]
        return trace.signal_out + trace.ase_out + trace.nli_out + trace.ride_out

    def routing_state(self) -> NetworkState:
        """Commanded (non-hidden) view: routing, drops and failures only."""
        return self._state

    @property
    def state_version(self) -> int:
        return self._version


def make_plant(
    state: NetworkState,
    perturbation: PerturbationSpec | None = None,
    seed: int = 0,
    noise: NoiseSpec | None = None,
) -> Plant:
    """Perturb a nominal state into a hidden-truth plant, seeded.

    Output connector losses get a uniform excess, Raman strength a uniform
    multiplier, and every amplifier a fresh zero-centred Gaussian ripple
    sampled at its band's channel frequencies.
    """
    spec = perturbation if perturbation is not None else PerturbationSpec()
    rng = np.random.default_rng([int(seed), zlib.crc32(b"plant-perturbation")])
    network = state.network
    grid = network.grid
    new_links = []
    for link in network.links:
        new_spans = []
        for span in link.spans:
            extra = rng.uniform(spec.connector_loss_low_db, spec.connector_loss_high_db)
            raman = rng.uniform(spec.raman_scale_low, spec.raman_scale_high)
            new_spans.append(
                replace(
                    span,
                    output_connector_loss_db=float(
                        np.clip(span.output_connector_loss_db + extra, 0.0, 10.0)
                    ),
                    raman_scale=float(np.clip(raman, 0.2, 5.0)),
                )
            )
        new_sites = []
        for site in link.amp_sites:
            new_site = []
            for amp in site:
                mask = grid.band_mask(amp.band)
                nodes = tuple(float(f) for f in grid.frequencies_thz[mask])
                ripple = rng.normal(0.0, spec.ripple_sigma_db, len(nodes))
                ripple = np.clip(ripple, -3.0, 3.0)
                if spec.ripple_sigma_db == 0.0:
                    new_site.append(amp)
                else:
                    new_site.append(
                        replace(
                            amp,
                            ripple_db=tuple(float(r) for r in ripple),
                            ripple_nodes_thz=nodes,
                        )
                    )
            new_sites.append(tuple(new_site))
        new_links.append(replace(link, spans=tuple(new_spans), amp_sites=tuple(new_sites)))
    hidden_network = replace(network, links=tuple(new_links))
    hidden_state = NetworkState(
        network=hidden_network,
        lightpaths=state.lightpaths,
        edfa_overrides=state.edfa_overrides,
        failed_spans=state.failed_spans,
        transmit_drops=state.transmit_drops,
    )
    return Plant(hidden_state, noise if noise is not None else NoiseSpec(), seed)
