"""Built-in topologies and standard loadings for the three reference systems.

system1  C32+L32 long-haul lab link: 22 x 100 km G.654 spans, 150 GHz grid,
         six transponder channels spread over the band edges and centres,
         everything else ASE-filled.
system2  Six-ROADM C-band mesh, 60 channels at 100 GHz, spans 47-114 km of
         G.652, no ASE fill. Only the span-length range and node count are
         published for the field system; the edge set and the exact span
         lengths below are a documented synthetic stand-in (fixed draw from
         [47, 114] km).
system3  C48+L48 field link: 6 G.652 spans totalling 469.3 km (max 86.4 km),
         20 low-frequency L-band channels added at node A, the rest plus
         four C-band transponders added at node B.

system2_stress is a test fixture, not a published system: its protection
path is lengthened until it cannot hold 18 dB GSNR.
"""
from __future__ import annotations

import numpy as np

from .spectral import BandPlan, BandSpec, build_grid
from .topology import Lightpath, Network, NetworkState, load_topology

# handbook-typical fiber constants, overridable in topology documents
FIBER_TYPES = {
    "G652": {"attenuation_db_per_km": 0.20, "gamma": 1.3, "beta2_ps2_per_km": -21.7},
    "G654": {"attenuation_db_per_km": 0.17, "gamma": 0.8, "beta2_ps2_per_km": -26.0},
}

NF_DB = {"C": 5.0, "L": 6.0}

BAND_PLANS = {
    "system1": BandPlan(
        name="system1",
        bands=(BandSpec("L", 186.15, 190.8, 32), BandSpec("C", 191.35, 196.0, 32)),
        spacing_ghz=150.0,
        symbol_bandwidth_ghz=91.6,
    ),
    "system2": BandPlan(
        name="system2",
        bands=(BandSpec("C", 190.7, 196.6, 60),),
        spacing_ghz=100.0,
        symbol_bandwidth_ghz=91.6,
    ),
    "system3": BandPlan(
        name="system3",
        bands=(BandSpec("L", 186.1, 190.8, 48), BandSpec("C", 191.4, 196.1, 48)),
        spacing_ghz=100.0,
        symbol_bandwidth_ghz=91.6,
    ),
}
BAND_PLANS["system2_stress"] = BAND_PLANS["system2"]

CUT_CHANNELS = {
    "system1": (0, 15, 31, 32, 47, 63),
    "system2": (10, 12, 14, 16, 18, 20, 22, 24, 30, 32),
    "system3": (0, 48, 63, 79, 95),
}

PRESET_NAMES = ("system1", "system2", "system3", "system2_stress")


def _span_doc(span_id: str, length_km: float, fiber: str, **overrides) -> dict:
    doc = {
        "id": span_id,
        "length_km": length_km,
        "raman_slope": 0.028,
        "raman_scale": 1.0,
        "raman_cutoff_thz": 14.0,
        "input_connector_loss_db": 0.5,
        "output_connector_loss_db": 0.5,
    }
    doc.update(FIBER_TYPES[fiber])
    doc.update(overrides)
    return doc


def _amp_docs(link_id: str, site_idx: int, gain_db: float, bands: tuple[str, ...],
              grid, nf_bump_db: float = 0.0) -> list[dict]:
    docs = []
    for band in bands:
        f_min, f_max = grid.band_range_thz(band)
        docs.append(
            {
                "id": f"{link_id}:a{site_idx}:{band}",
                "site": f"{link_id}:site{site_idx}",
                "site_index": site_idx,
                "band": band,
                "gain_db": gain_db,
                "tilt_db": 0.0,
                "nf_db": NF_DB[band] + nf_bump_db,
                "band_range_thz": [f_min, f_max],
                "max_pout_dbm": 23.0,
                "voa_out_db": 0.0,
            }
        )
    return docs


def _commissioned_gain_tilt(span_doc: dict, grid, band: str) -> tuple[float, float]:
    """Per-band flat gain and edge-to-edge tilt restoring the nominal
    full-load span transfer (the factory line-commissioning condition).

    The SRS transfer is nearly linear in frequency within one band, so a
    flat+tilt amplifier compensates it to a few millidB per span.
    """
    from .fiber import PropagationOptions, propagate
    from .spectral import PowerSpectrum, dbm_array
    from .topology import span_from_document

    key = (tuple(sorted(span_doc.items())), id(grid), band)
    if key in _COMMISSION_CACHE:
        return _COMMISSION_CACHE[key]
    span = span_from_document(span_doc)
    launch = PowerSpectrum(grid, np.ones(len(grid)))
    prop = propagate(span, launch, PropagationOptions(step_km=0.5))
    needed_db = dbm_array(launch.powers_mw) - dbm_array(prop.output.powers_mw)
    mask = grid.band_mask(band)
    f = grid.frequencies_thz[mask]
    y = needed_db[mask]
    f_center = (f.min() + f.max()) / 2.0
    x = (f - f_center) / (f.max() - f.min())
    design = np.vstack([np.ones_like(f), x]).T
    (flat, tilt), *_ = np.linalg.lstsq(design, y, rcond=None)
    result = (round(float(flat), 3), round(float(tilt), 3))
    _COMMISSION_CACHE[key] = result
    return result


_COMMISSION_CACHE: dict = {}


def _link_doc(link_id: str, from_node: str, to_node: str, lengths: list[float],
              fiber: str, bands: tuple[str, ...], grid, nf_bump_db: float = 0.0) -> dict:
    spans = []
    amps = []
    for i, length in enumerate(lengths):
        span_doc = _span_doc(f"{link_id}:s{i}", length, fiber)
        spans.append(span_doc)
        site_amps = _amp_docs(link_id, i, 0.0, bands, grid, nf_bump_db)
        for amp_doc in site_amps:
            gain, tilt = _commissioned_gain_tilt(span_doc, grid, amp_doc["band"])
            amp_doc["gain_db"] = gain
            amp_doc["tilt_db"] = tilt
        amps.extend(site_amps)
    return {
        "id": link_id,
        "from": from_node,
        "to": to_node,
        "launch_power_dbm": 0.0,
        "spans": spans,
        "amps": amps,
    }


# span lengths for system2: one fixed draw from [47, 114] km, frozen here
_SYSTEM2_LINKS = {
    ("A", "B"): [64.0],
    ("B", "C"): [51.0, 83.0],
    ("A", "C"): [98.0, 71.0],
    ("C", "E"): [47.0, 114.0],
    ("C", "D"): [58.0],
    ("D", "F"): [92.0],
}

_SYSTEM3_SPANS = {"A-B": [86.4], "B-E": [76.6, 75.0, 78.0, 73.3, 80.0]}


def preset_document(name: str) -> dict:
    """Topology JSON document for a named preset."""
    if name == "system1":
        plan = BAND_PLANS["system1"]
        grid = build_grid(plan)
        return {
            "name": "system1",
            "roadm_loss_db": 14.0,
            "grid": _plan_doc(plan),
            "nodes": [{"id": "A", "type": "terminal"}, {"id": "B", "type": "terminal"}],
            "links": [
                _link_doc("S1", "A", "B", [100.0] * 22, "G654", ("C", "L"), grid)
            ],
        }
    if name in ("system2", "system2_stress"):
        plan = BAND_PLANS["system2"]
        grid = build_grid(plan)
        links = []
        for (u, v), lengths in _SYSTEM2_LINKS.items():
            nf_bump = 0.0
            if name == "system2_stress" and (u, v) == ("B", "C"):
                lengths = [114.0] * 8
                nf_bump = 2.0
            links.append(_link_doc(f"{u}-{v}", u, v, lengths, "G652", ("C",), grid, nf_bump))
        return {
            "name": name,
            "roadm_loss_db": 14.0,
            "grid": _plan_doc(plan),
            "nodes": [{"id": n, "type": "roadm"} for n in "ABCDEF"],
            "links": links,
        }
    if name == "system3":
        plan = BAND_PLANS["system3"]
        grid = build_grid(plan)
        return {
            "name": "system3",
            "roadm_loss_db": 14.0,
            "grid": _plan_doc(plan),
            "nodes": [
                {"id": "A", "type": "terminal"},
                {"id": "B", "type": "roadm"},
                {"id": "E", "type": "terminal"},
            ],
            "links": [
                _link_doc("S3A", "A", "B", _SYSTEM3_SPANS["A-B"], "G652", ("C", "L"), grid),
                _link_doc("S3B", "B", "E", _SYSTEM3_SPANS["B-E"], "G652", ("C", "L"), grid),
            ],
        }
    raise KeyError(f"unknown preset {name!r}; known: {PRESET_NAMES}")


def _plan_doc(plan: BandPlan) -> dict:
    from .spectral import band_plan_to_document

    return band_plan_to_document(plan)


def preset_network(name: str) -> Network:
    return load_topology(preset_document(name))


def initial_state(name: str) -> NetworkState:
    """NetworkState with the standard loading of the named system."""
    network = preset_network(name)
    if name == "system1":
        cuts = CUT_CHANNELS["system1"]
        lps = [
            Lightpath(f"cut-{i:02d}", ("A", "B"), frozenset({ch}))
            for i, ch in enumerate(cuts)
        ]
        fillers = frozenset(range(64)) - frozenset(cuts)
        lps.append(Lightpath("fill-A", ("A", "B"), fillers, occupancy="ase_filler"))
        return NetworkState(network=network, lightpaths=tuple(lps))
    if name in ("system2", "system2_stress"):
        ace = CUT_CHANNELS["system2"][:8]
        abce = CUT_CHANNELS["system2"][8:]
        lps = [
            Lightpath(f"lp-ace-{i}", ("A", "C", "E"), frozenset({ch}))
            for i, ch in enumerate(ace)
        ]
        lps += [
            Lightpath(f"lp-abce-{i}", ("A", "B", "C", "E"), frozenset({ch}))
            for i, ch in enumerate(abce)
        ]
        return NetworkState(network=network, lightpaths=tuple(lps))
    if name == "system3":
        lps = [
            Lightpath("lp-a-cut", ("A", "B", "E"), frozenset({0})),
            Lightpath(
                "lp-a-fill", ("A", "B", "E"), frozenset(range(1, 20)), occupancy="ase_filler"
            ),
        ]
        b_cuts = [ch for ch in CUT_CHANNELS["system3"] if ch >= 48]
        for ch in b_cuts:
            lps.append(Lightpath(f"lp-b-cut-{ch}", ("B", "E"), frozenset({ch})))
        b_fill = frozenset(range(20, 96)) - frozenset(b_cuts)
        lps.append(Lightpath("lp-b-fill", ("B", "E"), b_fill, occupancy="ase_filler"))
        return NetworkState(network=network, lightpaths=tuple(lps))
    raise KeyError(f"unknown preset {name!r}; known: {PRESET_NAMES}")


def drop_mask(name: str, count: int = 16, variant: str = "low") -> tuple[int, ...]:
    """Deterministic transmitter drop masks over filler channels only.

    ``low`` scans filler indices upward from the bottom of the band,
    ``high`` downward from the top; transponder channels are never dropped.
    """
    state = initial_state(name)
    cuts = set(CUT_CHANNELS[name]) if name in CUT_CHANNELS else set()
    fillers = sorted(
        ch
        for lp in state.lightpaths
        if lp.occupancy == "ase_filler"
        for ch in lp.channel_indices
        if ch not in cuts
    )
    if len(fillers) < count:
        raise ValueError(f"only {len(fillers)} filler channels available")
    if variant == "low":
        return tuple(fillers[:count])
    if variant == "high":
        return tuple(sorted(fillers[-count:]))
    raise ValueError(f"unknown drop mask variant {variant!r}")
