"""Mesh topology, lightpaths, routing and the switchable network state.

NetworkState is an immutable value; every mutation returns a new state and
validates the spectrum-clash invariant. Links are directed and modelled in
one propagation direction.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, Mapping, Sequence

import networkx as nx
import numpy as np

from .amplifier import EdfaConfig, edfa_from_document, edfa_to_document
from .fiber import SpanParams
from .spectral import (
    BandPlan,
    ChannelGrid,
    band_plan_from_document,
    band_plan_to_document,
    build_grid,
)

NODE_TYPES = ("roadm", "amp_site", "terminal")
MODULATIONS = ("QPSK", "16QAM", "PCS16QAM")


class TopologyError(ValueError):
    pass


class NoPathError(TopologyError):
    pass


class SpectrumClashError(TopologyError):
    def __init__(self, conflicts):
        self.conflicts = conflicts
        super().__init__(f"spectrum clash: {conflicts}")


@dataclass(frozen=True)
class Node:
    node_id: str
    kind: str = "roadm"

    def __post_init__(self):
        if self.kind not in NODE_TYPES:
            raise TopologyError(f"unknown node type {self.kind!r}")


@dataclass(frozen=True)
class Link:
    link_id: str
    from_node: str
    to_node: str
    spans: tuple[SpanParams, ...]
    #: one amplification site after each span; each site holds one EDFA per band
    amp_sites: tuple[tuple[EdfaConfig, ...], ...]
    launch_power_dbm: float = 0.0

    def __post_init__(self):
        if len(self.amp_sites) != len(self.spans):
            raise TopologyError(
                f"link {self.link_id}: {len(self.spans)} spans but "
                f"{len(self.amp_sites)} amp sites"
            )
        if not self.spans:
            raise TopologyError(f"link {self.link_id} has no spans")

    @property
    def length_km(self) -> float:
        return sum(s.length_km for s in self.spans)

    def span_ids(self) -> list[str]:
        return [s.span_id for s in self.spans]


@dataclass(frozen=True)
class Network:
    nodes: tuple[Node, ...]
    links: tuple[Link, ...]
    grid: ChannelGrid
    band_plan: BandPlan | None = None
    roadm_loss_db: float = 14.0
    name: str = ""

    def __post_init__(self):
        ids = [n.node_id for n in self.nodes]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate node ids")
        known = set(ids)
        span_ids = set()
        amp_ids = set()
        for link in self.links:
            if link.from_node not in known or link.to_node not in known:
                raise TopologyError(f"link {link.link_id} references unknown node")
            for s in link.spans:
                if not s.span_id or s.span_id in span_ids:
                    raise TopologyError(f"missing or duplicate span id on {link.link_id}")
                span_ids.add(s.span_id)
            for site in link.amp_sites:
                for amp in site:
                    if not amp.amp_id or amp.amp_id in amp_ids:
                        raise TopologyError(f"missing or duplicate amp id on {link.link_id}")
                    amp_ids.add(amp.amp_id)
        if len(self.nodes) > 1:
            g = nx.Graph()
            g.add_nodes_from(ids)
            for link in self.links:
                g.add_edge(link.from_node, link.to_node)
            if not nx.is_connected(g):
                raise TopologyError("topology graph is not connected")

    def node(self, node_id: str) -> Node:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise TopologyError(f"unknown node {node_id!r}")

    def link(self, link_id: str) -> Link:
        for l in self.links:
            if l.link_id == link_id:
                return l
        raise TopologyError(f"unknown link {link_id!r}")

    def link_between(self, from_node: str, to_node: str) -> Link:
        for l in self.links:
            if l.from_node == from_node and l.to_node == to_node:
                return l
        raise NoPathError(f"no link {from_node} -> {to_node}")

    def span(self, span_id: str) -> tuple[Link, int]:
        for link in self.links:
            for i, s in enumerate(link.spans):
                if s.span_id == span_id:
                    return link, i
        raise TopologyError(f"unknown span {span_id!r}")

    def amp(self, amp_id: str) -> tuple[Link, int, EdfaConfig]:
        for link in self.links:
            for i, site in enumerate(link.amp_sites):
                for amp in site:
                    if amp.amp_id == amp_id:
                        return link, i, amp
        raise TopologyError(f"unknown amp {amp_id!r}")


@dataclass(frozen=True)
class Lightpath:
    lightpath_id: str
    route: tuple[str, ...]
    channel_indices: frozenset[int]
    modulation: str = "PCS16QAM"
    symbol_rate_gbaud: float = 91.6
    source_node: str = ""
    #: "signal" lightpaths are CUTs; "ase_filler" ones load the spectrum but
    #: are excluded from GSNR reporting
    occupancy: str = "signal"

    def __post_init__(self):
        if self.modulation not in MODULATIONS:
            raise TopologyError(f"unknown modulation {self.modulation!r}")
        if self.occupancy not in ("signal", "ase_filler"):
            raise TopologyError(f"bad lightpath occupancy {self.occupancy!r}")
        if len(self.route) < 1:
            raise TopologyError("route must contain at least one node")
        if not self.channel_indices:
            raise TopologyError("lightpath carries no channels")
        if not self.source_node:
            object.__setattr__(self, "source_node", self.route[0])


@dataclass(frozen=True)
class NetworkState:
    network: Network
    lightpaths: tuple[Lightpath, ...] = ()
    #: sorted (amp_id, EdfaConfig) pairs overriding topology amps
    edfa_overrides: tuple[tuple[str, EdfaConfig], ...] = ()
    failed_spans: frozenset[str] = frozenset()
    #: transmitter-side drops: (lightpath_id, channel) pairs forced dark
    transmit_drops: frozenset[tuple[str, int]] = frozenset()

    def __post_init__(self):
        ids = [lp.lightpath_id for lp in self.lightpaths]
        if len(set(ids)) != len(ids):
            raise TopologyError("duplicate lightpath ids")
        for amp_id, _ in self.edfa_overrides:
            self.network.amp(amp_id)
        for span_id in self.failed_spans:
            self.network.span(span_id)
        _check_clashes(self.network, self.lightpaths)

    # -- accessors ---------------------------------------------------------

    def lightpath(self, lightpath_id: str) -> Lightpath:
        for lp in self.lightpaths:
            if lp.lightpath_id == lightpath_id:
                return lp
        raise TopologyError(f"unknown lightpath {lightpath_id!r}")

    def overrides_map(self) -> dict[str, EdfaConfig]:
        return dict(self.edfa_overrides)

    def amp_config(self, amp_id: str) -> EdfaConfig:
        for aid, cfg in self.edfa_overrides:
            if aid == amp_id:
                return cfg
        return self.network.amp(amp_id)[2]

    def site_configs(self, link: Link, site_index: int) -> tuple[EdfaConfig, ...]:
        overrides = self.overrides_map()
        return tuple(
            overrides.get(a.amp_id, a) for a in link.amp_sites[site_index]
        )

    def route_links(self, route: Sequence[str]) -> list[Link]:
        return [
            self.network.link_between(u, v) for u, v in zip(route, route[1:])
        ]

    def lightpaths_on_link(self, link_id: str) -> list[Lightpath]:
        found = []
        for lp in self.lightpaths:
            for link in self.route_links(lp.route):
                if link.link_id == link_id:
                    found.append(lp)
                    break
        return found

    def lightpath_status(self, lightpath_id: str) -> str:
        lp = self.lightpath(lightpath_id)
        for link in self.route_links(lp.route):
            if any(s.span_id in self.failed_spans for s in link.spans):
                return "down"
        return "up"

    # -- mutations (value semantics) ----------------------------------------

    def with_lightpaths(self, lightpaths: Iterable[Lightpath]) -> "NetworkState":
        return replace(self, lightpaths=tuple(lightpaths))

    def with_override(self, config: EdfaConfig) -> "NetworkState":
        amp_id = config.amp_id
        merged = {aid: cfg for aid, cfg in self.edfa_overrides}
        base = self.network.amp(amp_id)[2]
        if config == base:
            merged.pop(amp_id, None)
        else:
            merged[amp_id] = config
        return replace(self, edfa_overrides=tuple(sorted(merged.items())))

    def with_overrides(self, configs: Iterable[EdfaConfig]) -> "NetworkState":
        state = self
        for cfg in configs:
            state = state.with_override(cfg)
        return state


def _check_clashes(network: Network, lightpaths: Sequence[Lightpath]) -> None:
    by_link: dict[str, list[tuple[str, frozenset[int]]]] = {}
    for lp in lightpaths:
        for u, v in zip(lp.route, lp.route[1:]):
            link = network.link_between(u, v)
            by_link.setdefault(link.link_id, []).append(
                (lp.lightpath_id, lp.channel_indices)
            )
    conflicts = []
    for link_id, entries in by_link.items():
        for i in range(len(entries)):
            for j in range(i + 1, len(entries)):
                shared = entries[i][1] & entries[j][1]
                if shared:
                    conflicts.append(
                        {
                            "link": link_id,
                            "lightpaths": [entries[i][0], entries[j][0]],
                            "channels": sorted(shared),
                        }
                    )
    if conflicts:
        raise SpectrumClashError(conflicts)


# ---------------------------------------------------------------------------
# Routing


def route_paths(network: Network, src: str, dst: str, k: int = 2) -> list[tuple[str, ...]]:
    """k-shortest loop-free paths by total km; ties by hop count then by
    node-id sequence. src == dst yields the single zero-length path."""
    network.node(src)
    network.node(dst)
    if k < 1:
        return []
    if src == dst:
        return [(src,)]
    g = nx.DiGraph()
    for n in network.nodes:
        g.add_node(n.node_id)
    for link in network.links:
        # parallel links collapse to the shortest; presets have none
        if g.has_edge(link.from_node, link.to_node):
            if g[link.from_node][link.to_node]["weight"] <= link.length_km:
                continue
        g.add_edge(link.from_node, link.to_node, weight=link.length_km)
    try:
        gen = nx.shortest_simple_paths(g, src, dst, weight="weight")
    except nx.NetworkXNoPath as exc:
        raise NoPathError(f"no path {src} -> {dst}") from exc

    def path_km(path):
        return sum(g[u][v]["weight"] for u, v in zip(path, path[1:]))

    collected: list[tuple[float, int, tuple[str, ...]]] = []
    try:
        for path in gen:
            km = path_km(path)
            if len(collected) >= k and km > collected[k - 1][0] + 1e-9:
                break
            collected.append((km, len(path) - 1, tuple(path)))
            collected.sort()
            if len(collected) > 4 * k + 8:
                break
    except nx.NetworkXNoPath as exc:
        raise NoPathError(f"no path {src} -> {dst}") from exc
    if not collected:
        raise NoPathError(f"no path {src} -> {dst}")
    return [p for _, _, p in collected[:k]]


def apply_switch(
    state: NetworkState, lightpath_ids: Sequence[str], new_route: Sequence[str]
) -> NetworkState:
    """Move lightpaths onto a new route, keeping their channel indices.

    Validates the route and the spectrum-clash invariant; the original state
    is untouched.
    """
    if not lightpath_ids:
        return state
    new_route = tuple(new_route)
    state.route_links(new_route)  # validates every hop exists
    moving = set(lightpath_ids)
    updated = []
    for lp in state.lightpaths:
        if lp.lightpath_id in moving:
            if (lp.route[0], lp.route[-1]) != (new_route[0], new_route[-1]):
                raise TopologyError(
                    f"lightpath {lp.lightpath_id}: new route endpoints "
                    f"{new_route[0]}->{new_route[-1]} do not match "
                    f"{lp.route[0]}->{lp.route[-1]}"
                )
            updated.append(replace(lp, route=new_route))
            moving.discard(lp.lightpath_id)
        else:
            updated.append(lp)
    if moving:
        raise TopologyError(f"unknown lightpaths {sorted(moving)}")
    return state.with_lightpaths(updated)


def fail_span(state: NetworkState, span_id: str) -> NetworkState:
    state.network.span(span_id)
    return replace(state, failed_spans=state.failed_spans | {span_id})


def clear_failure(state: NetworkState, span_id: str) -> NetworkState:
    state.network.span(span_id)
    return replace(state, failed_spans=state.failed_spans - {span_id})


# ---------------------------------------------------------------------------
# JSON documents


def span_to_document(span: SpanParams) -> dict:
    alpha = span.attenuation_db_per_km
    return {
        "id": span.span_id,
        "length_km": span.length_km,
        "attenuation_db_per_km": alpha if isinstance(alpha, (int, float)) else [list(p) for p in alpha],
        "raman_slope": span.raman_slope,
        "raman_scale": span.raman_scale,
        "raman_cutoff_thz": span.raman_cutoff_thz,
        "input_connector_loss_db": span.input_connector_loss_db,
        "output_connector_loss_db": span.output_connector_loss_db,
        "gamma": span.gamma,
        "beta2_ps2_per_km": span.beta2_ps2_per_km,
    }


def span_from_document(doc: Mapping) -> SpanParams:
    alpha = doc["attenuation_db_per_km"]
    if not isinstance(alpha, (int, float)):
        alpha = tuple((float(f), float(a)) for f, a in alpha)
    return SpanParams(
        span_id=str(doc.get("id", "")),
        length_km=float(doc["length_km"]),
        attenuation_db_per_km=alpha,
        raman_slope=float(doc.get("raman_slope", 0.028)),
        raman_scale=float(doc.get("raman_scale", 1.0)),
        raman_cutoff_thz=float(doc.get("raman_cutoff_thz", 14.0)),
        input_connector_loss_db=float(doc.get("input_connector_loss_db", 0.5)),
        output_connector_loss_db=float(doc.get("output_connector_loss_db", 0.5)),
        gamma=float(doc.get("gamma", 1.3)),
        beta2_ps2_per_km=float(doc.get("beta2_ps2_per_km", -21.7)),
    )


def network_to_document(network: Network) -> dict:
    links = []
    for link in network.links:
        amps = []
        for site_idx, site in enumerate(link.amp_sites):
            for amp in site:
                doc = edfa_to_document(amp)
                doc["site"] = amp.site or f"{link.link_id}:site{site_idx}"
                doc["site_index"] = site_idx
                amps.append(doc)
        links.append(
            {
                "id": link.link_id,
                "from": link.from_node,
                "to": link.to_node,
                "launch_power_dbm": link.launch_power_dbm,
                "spans": [span_to_document(s) for s in link.spans],
                "amps": amps,
            }
        )
    doc = {
        "name": network.name,
        "roadm_loss_db": network.roadm_loss_db,
        "nodes": [{"id": n.node_id, "type": n.kind} for n in network.nodes],
        "links": links,
    }
    if network.band_plan is not None:
        doc["grid"] = band_plan_to_document(network.band_plan)
    return doc


def load_topology(document: Mapping) -> Network:
    """Validated Network from its JSON document."""
    try:
        plan = band_plan_from_document(document["grid"])
        grid = build_grid(plan)
        nodes = tuple(
            Node(node_id=str(n["id"]), kind=str(n.get("type", "roadm")))
            for n in document["nodes"]
        )
        links = []
        for ldoc in document["links"]:
            link_id = str(ldoc["id"])
            spans = []
            for i, sdoc in enumerate(ldoc["spans"]):
                span = span_from_document(sdoc)
                if not span.span_id:
                    span = replace(span, span_id=f"{link_id}:s{i}")
                spans.append(span)
            sites: dict[int, list[EdfaConfig]] = {}
            for adoc in ldoc.get("amps", []):
                site_idx = int(adoc.get("site_index", len(sites)))
                sites.setdefault(site_idx, []).append(edfa_from_document(adoc))
            if sites and (max(sites) >= len(spans) or min(sites) < 0):
                raise TopologyError(
                    f"link {link_id}: amp site index out of range for {len(spans)} spans"
                )
            amp_sites = tuple(
                tuple(sorted(sites.get(i, []), key=lambda a: a.band))
                for i in range(len(spans))
            )
            links.append(
                Link(
                    link_id=link_id,
                    from_node=str(ldoc["from"]),
                    to_node=str(ldoc["to"]),
                    spans=tuple(spans),
                    amp_sites=amp_sites,
                    launch_power_dbm=float(ldoc.get("launch_power_dbm", 0.0)),
                )
            )
    except (KeyError, TypeError) as exc:
        raise TopologyError(f"malformed topology document: {exc}") from exc
    return Network(
        nodes=nodes,
        links=tuple(links),
        grid=grid,
        band_plan=plan,
        roadm_loss_db=float(document.get("roadm_loss_db", 14.0)),
        name=str(document.get("name", "")),
    )


def lightpath_to_document(lp: Lightpath) -> dict:
    return {
        "id": lp.lightpath_id,
        "route": list(lp.route),
        "channels": sorted(lp.channel_indices),
        "modulation": lp.modulation,
        "symbol_rate_gbaud": lp.symbol_rate_gbaud,
        "source_node": lp.source_node,
        "occupancy": lp.occupancy,
    }


def lightpath_from_document(doc: Mapping) -> Lightpath:
    return Lightpath(
        lightpath_id=str(doc["id"]),
        route=tuple(doc["route"]),
        channel_indices=frozenset(int(c) for c in doc["channels"]),
        modulation=str(doc.get("modulation", "PCS16QAM")),
        symbol_rate_gbaud=float(doc.get("symbol_rate_gbaud", 91.6)),
        source_node=str(doc.get("source_node", "")) or str(doc["route"][0]),
        occupancy=str(doc.get("occupancy", "signal")),
    )


def state_to_document(state: NetworkState) -> dict:
    return {
        "topology": network_to_document(state.network),
        "lightpaths": [lightpath_to_document(lp) for lp in state.lightpaths],
        "edfa_overrides": [edfa_to_document(cfg) for _, cfg in state.edfa_overrides],
        "failed_spans": sorted(state.failed_spans),
        "transmit_drops": sorted([lp, ch] for lp, ch in state.transmit_drops),
    }


def state_from_document(doc: Mapping) -> NetworkState:
    network = load_topology(doc["topology"])
    lightpaths = tuple(lightpath_from_document(d) for d in doc.get("lightpaths", []))
    overrides = tuple(
        sorted((cfg.amp_id, cfg) for cfg in (edfa_from_document(d) for d in doc.get("edfa_overrides", [])))
    )
    return NetworkState(
        network=network,
        lightpaths=lightpaths,
        edfa_overrides=overrides,
        failed_spans=frozenset(doc.get("failed_spans", [])),
        transmit_drops=frozenset((str(l), int(c)) for l, c in doc.get("transmit_drops", [])),
    )
