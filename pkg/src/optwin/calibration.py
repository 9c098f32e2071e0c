"""Twin parameter refinement against OCM telemetry.

Damped least squares (Levenberg-Marquardt with finite-difference Jacobians)
over the three calibratable families: span excess loss (output connector),
span Raman strength, and per-amplifier gain ripple. A Tikhonov term pulls
parameters toward their pre-calibration values.

With OCM pairs at z0/zmax of the spans, the problem separates into
independent blocks: each span is fitted from its measured input profile
(teacher forcing), and each amplifier bracketed by OCM taps is fitted from
the measured gain spectrum with the ripple constrained to zero mean (flat
gain offsets belong to connector losses). When only per-amplifier total
powers are available, a joint flat-loss fit per link stands in, and the
profile-shaped parameters are flagged unidentifiable.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .amplifier import EdfaConfig, apply_amp_site
from .fiber import PropagationOptions, SpanParams, nli_for_span, propagate
from .spectral import PowerSpectrum, dbm_array, from_dbm
from .topology import Link, Network, NetworkState, load_topology, network_to_document
from .twin import TelemetryRecord, link_launch_spectrum

PARAM_FAMILIES = ("connector_loss", "raman_scale", "ripple")

RAMAN_SCALE_BOUNDS = (0.2, 5.0)
CONNECTOR_BOUNDS = (0.0, 10.0)
RIPPLE_BOUNDS = (-3.0, 3.0)


class CalibrationError(RuntimeError):
    pass


@dataclass(frozen=True)
class CalibrationOptions:
    max_iters: int = 25
    lambda_reg: float = 1e-2
    param_mask: frozenset = frozenset(PARAM_FAMILIES)
    span_ids: frozenset | None = None
    amp_ids: frozenset | None = None
    step_km: float = 0.5
    fd_step_db: float = 0.01
    fd_step_raman: float = 0.01


@dataclass
class BlockResult:
    kind: str  # "span_profile" | "amp_ripple" | "link_totals"
    target_id: str
    params: dict
    objective_history: list
    residual_mse_db2: float
    iterations: int
    warnings: list


@dataclass
class CalibrationReport:
    blocks: list
    objective_history: list
    residual_mse_db2: float
    warnings: list

    def refined_spans(self) -> dict:
        out = {}
        for block in self.blocks:
            if block.kind in ("span_profile", "link_totals"):
                for span_id, vals in block.params.items():
                    out[span_id] = vals
        return out

    def refined_ripples(self) -> dict:
        out = {}
        for block in self.blocks:
            if block.kind == "amp_ripple":
                out[block.target_id] = block.params
        return out

    def to_document(self) -> dict:
        return {
            "residual_mse_db2": self.residual_mse_db2,
            "objective_history": list(self.objective_history),
            "warnings": list(self.warnings),
            "blocks": [
                {
                    "kind": b.kind,
                    "target": b.target_id,
                    "params": b.params,
                    "iterations": b.iterations,
                    "residual_mse_db2": b.residual_mse_db2,
                    "objective_history": list(b.objective_history),
                    "warnings": list(b.warnings),
                }
                for b in self.blocks
            ],
        }


# ---------------------------------------------------------------------------
# LM core


def _levenberg_marquardt(
    residual_fn: Callable[[np.ndarray], np.ndarray],
    theta0: np.ndarray,
    theta_nom: np.ndarray,
    bounds: Sequence[tuple[float, float]],
    fd_steps: np.ndarray,
    lambda_reg: float,
    max_iters: int,
):
    """Damped least squares with box projection; objective is the residual
    SSE plus the Tikhonov pull toward theta_nom. Only improving steps are
    accepted, so the returned history is non-increasing."""
    lo = np.array([b[0] for b in bounds])
    hi = np.array([b[1] for b in bounds])
    theta = np.clip(theta0.astype(float), lo, hi)
    r = residual_fn(theta)
    if not np.all(np.isfinite(r)):
        raise CalibrationError("objective non-finite at initial parameters")

    def objective(res, th):
        return float(res @ res + lambda_reg * float(((th - theta_nom) ** 2).sum()))

    obj = objective(r, theta)
    history = [obj]
    lam = 1e-3
    n = len(theta)
    iterations = 0
    for _ in range(max_iters):
        if obj <= 1e-18:
            break
        jac = np.empty((len(r), n))
        for j in range(n):
            probe = theta.copy()
            step = fd_steps[j]
            if probe[j] + step > hi[j]:
                step = -step
            probe[j] += step
            r_j = residual_fn(probe)
            jac[:, j] = (r_j - r) / step
        grad = jac.T @ r + lambda_reg * (theta - theta_nom)
        hess = jac.T @ jac + lambda_reg * np.eye(n)
        improved = False
        for _attempt in range(10):
            damped = hess + lam * np.diag(np.maximum(np.diag(hess), 1e-12))
            try:
                delta = np.linalg.solve(damped, -grad)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            theta_new = np.clip(theta + delta, lo, hi)
            r_new = residual_fn(theta_new)
            if not np.all(np.isfinite(r_new)):
                raise CalibrationError("objective non-finite during calibration step")
            obj_new = objective(r_new, theta_new)
            if obj_new < obj * (1 - 1e-12):
                theta, r, obj = theta_new, r_new, obj_new
                history.append(obj)
                lam = max(lam / 3.0, 1e-8)
                improved = True
                iterations += 1
                break
            lam *= 5.0
        if not improved:
            break
        if len(history) >= 2 and history[-2] - history[-1] < 1e-12 * max(history[-2], 1e-12):
            break
    return theta, r, history, iterations


# ---------------------------------------------------------------------------
# Telemetry indexing


def _spectrum_from_payload(grid, payload: Mapping) -> np.ndarray:
    pos_of = {ch.index: i for i, ch in enumerate(grid.channels)}
    powers = np.zeros(len(grid))
    for row in payload["spectrum"]:
        row = dict(row)
        dbm = row.get("power_dbm")
        if dbm is not None:
            powers[pos_of[int(row["index"])]] = from_dbm(float(dbm))
    return powers


def _index_telemetry(state: NetworkState, telemetry: Sequence[TelemetryRecord]):
    """Latest reading per location: span OCM pairs, amp-output OCMs and
    per-amp totals."""
    grid = state.network.grid
    span_ocm: dict[tuple[str, str], tuple[int, np.ndarray]] = {}
    amp_ocm: dict[str, tuple[int, np.ndarray]] = {}
    amp_total: dict[str, tuple[int, float]] = {}
    for rec in telemetry:
        loc = rec.location_map
        payload = rec.payload_map
        if rec.source == "ocm" and "span" in loc:
            key = (str(loc["span"]), str(loc["z"]))
            if key not in span_ocm or rec.t >= span_ocm[key][0]:
                span_ocm[key] = (rec.t, _spectrum_from_payload(grid, payload))
        elif rec.source == "ocm" and "amp" in loc:
            key = str(loc["amp"])
            if key not in amp_ocm or rec.t >= amp_ocm[key][0]:
                amp_ocm[key] = (rec.t, _spectrum_from_payload(grid, payload))
        elif rec.source == "amp_total_power":
            key = str(loc["amp"])
            raw = payload["total_dbm"]
            total = -math.inf if raw is None else float(raw)
            if key not in amp_total or rec.t >= amp_total[key][0]:
                amp_total[key] = (rec.t, total)
    return (
        {k: v for k, (_, v) in span_ocm.items()},
        {k: v for k, (_, v) in amp_ocm.items()},
        {k: v for k, (_, v) in amp_total.items()},
    )


# ---------------------------------------------------------------------------
# Blocks


def _span_block(
    state: NetworkState,
    span: SpanParams,
    measured_in: np.ndarray,
    measured_out: np.ndarray,
    options: CalibrationOptions,
) -> BlockResult:
    grid = state.network.grid
    lit = (measured_in > 0) & (measured_out > 0)
    if int(lit.sum()) < 2:
        raise CalibrationError(f"span {span.span_id}: fewer than two lit channels in OCM pair")
    target_db = dbm_array(measured_out[lit])
    launch = PowerSpectrum(grid, np.where(lit, measured_in, 0.0))
    opts = PropagationOptions(step_km=options.step_km, sample_every_km=0.0)

    families = []
    if "connector_loss" in options.param_mask:
        families.append("connector_loss")
    if "raman_scale" in options.param_mask:
        families.append("raman_scale")

    def unpack(theta):
        params = {}
        for name, value in zip(families, theta):
            if name == "connector_loss":
                params["output_connector_loss_db"] = float(value)
            else:
                params["raman_scale"] = float(value)
        return replace(span, **params)

    def residual(theta):
        candidate = unpack(theta)
        prop = propagate(candidate, launch, opts)
        # the zmax tap reads signal plus the NLI generated inside the span
        nli = nli_for_span(candidate, launch, prop)
        predicted = (prop.output.powers_mw + nli)[lit]
        return dbm_array(predicted) - target_db

    theta0 = []
    nominal = []
    bounds = []
    fd = []
    for name in families:
        if name == "connector_loss":
            theta0.append(span.output_connector_loss_db)
            nominal.append(span.output_connector_loss_db)
            bounds.append(CONNECTOR_BOUNDS)
            fd.append(options.fd_step_db)
        else:
            theta0.append(span.raman_scale)
            nominal.append(span.raman_scale)
            bounds.append(RAMAN_SCALE_BOUNDS)
            fd.append(options.fd_step_raman)

    theta, r, history, iters = _levenberg_marquardt(
        residual,
        np.array(theta0),
        np.array(nominal),
        bounds,
        np.array(fd),
        options.lambda_reg,
        options.max_iters,
    )
    refined = unpack(theta)
    params = {
        span.span_id: {
            "output_connector_loss_db": {
                "nominal": span.output_connector_loss_db,
                "refined": refined.output_connector_loss_db,
            },
            "raman_scale": {"nominal": span.raman_scale, "refined": refined.raman_scale},
        }
    }
    return BlockResult(
        kind="span_profile",
        target_id=span.span_id,
        params=params,
        objective_history=history,
        residual_mse_db2=float((r @ r) / len(r)),
        iterations=iters,
        warnings=[],
    )


def _amp_block(
    state: NetworkState,
    amp: EdfaConfig,
    measured_in: np.ndarray,
    measured_out: np.ndarray,
    options: CalibrationOptions,
) -> BlockResult:
    """Fit the per-channel ripple of one amplifier from bracketing OCMs.

    The model projects the ripple to zero mean, leaving flat gain errors to
    the connector-loss family; the regulariser then pins the projected-out
    direction so the refined vector itself has (numerically) zero mean.
    """
    grid = state.network.grid
    band_mask = grid.band_mask(amp.band)
    lit = (measured_in > 0) & (measured_out > 0) & band_mask
    n_lit = int(lit.sum())
    if n_lit < 2:
        raise CalibrationError(f"amp {amp.amp_id}: fewer than two lit channels around it")
    freqs = grid.frequencies_thz[lit]
    measured_gain_db = dbm_array(measured_out[lit]) - dbm_array(measured_in[lit])

    from .amplifier import gain_db_at

    base_gain_db = np.array([gain_db_at(replace(amp, ripple_db=None, ripple_nodes_thz=None), f) for f in freqs])

    def residual(theta):
        ripple = theta - theta.mean()
        return (base_gain_db + ripple) - measured_gain_db

    nominal = np.zeros(n_lit)
    if amp.ripple_db is not None:
        nominal = np.interp(freqs, amp.ripple_nodes_thz, amp.ripple_db)
    theta, r, history, iters = _levenberg_marquardt(
        residual,
        nominal.copy(),
        nominal,
        [RIPPLE_BOUNDS] * n_lit,
        np.full(n_lit, options.fd_step_db),
        options.lambda_reg,
        options.max_iters,
    )
    ripple = theta - theta.mean()
    params = {
        "ripple_nodes_thz": [float(f) for f in freqs],
        "ripple_db": [float(x) for x in ripple],
        "nominal_ripple_db": [float(x) for x in nominal],
    }
    return BlockResult(
        kind="amp_ripple",
        target_id=amp.amp_id,
        params=params,
        objective_history=history,
        residual_mse_db2=float((r @ r) / len(r)),
        iterations=iters,
        warnings=[],
    )


def _totals_block(
    state: NetworkState,
    link: Link,
    amp_total_dbm: Mapping[str, float],
    options: CalibrationOptions,
) -> BlockResult:
    """Joint flat-loss fit of one link from per-amp input totals."""
    grid = state.network.grid
    launch = link_launch_spectrum(state, link)
    if launch.total_mw() == 0:
        raise CalibrationError(f"link {link.link_id}: no lit channels for totals calibration")
    opts = PropagationOptions(step_km=options.step_km, sample_every_km=0.0)

    targets = []  # (site_index, amp, measured_total_dbm)
    for idx, site in enumerate(link.amp_sites):
        for amp in site:
            if amp.amp_id in amp_total_dbm and math.isfinite(amp_total_dbm[amp.amp_id]):
                targets.append((idx, amp, amp_total_dbm[amp.amp_id]))
    if not targets:
        raise CalibrationError(f"link {link.link_id}: no usable amp totals")

    span_ids = [s.span_id for s in link.spans]

    def walk_totals(theta):
        spans = [
            replace(s, output_connector_loss_db=float(v))
            for s, v in zip(link.spans, theta)
        ]
        powers = np.array(launch.powers_mw)
        per_site_inputs = []
        for idx, span in enumerate(spans):
            prop = propagate(span, PowerSpectrum(grid, powers), opts)
            powers = prop.output.powers_mw
            per_site_inputs.append(powers.copy())
            res = apply_amp_site(state.site_configs(link, idx), PowerSpectrum(grid, powers))
            powers = res.output.powers_mw
        out = []
        for idx, amp, _ in targets:
            mask = grid.band_mask(amp.band)
            total = per_site_inputs[idx][mask].sum()
            out.append(10.0 * math.log10(total) if total > 0 else -120.0)
        return np.array(out)

    def residual(theta):
        predicted = walk_totals(theta)
        return predicted - np.array([m for _, _, m in targets])

    theta0 = np.array([s.output_connector_loss_db for s in link.spans])
    theta, r, history, iters = _levenberg_marquardt(
        residual,
        theta0,
        theta0.copy(),
        [CONNECTOR_BOUNDS] * len(theta0),
        np.full(len(theta0), options.fd_step_db),
        options.lambda_reg,
        options.max_iters,
    )
    params = {
        span_id: {
            "output_connector_loss_db": {"nominal": float(t0), "refined": float(t)},
        }
        for span_id, t0, t in zip(span_ids, theta0, theta)
    }
    warnings = []
    if "ripple" in options.param_mask or "raman_scale" in options.param_mask:
        warnings.append(
            f"link {link.link_id}: total-power telemetry cannot identify ripple or "
            "raman_scale; only flat losses refined"
        )
    return BlockResult(
        kind="link_totals",
        target_id=link.link_id,
        params=params,
        objective_history=history,
        residual_mse_db2=float((r @ r) / len(r)),
        iterations=iters,
        warnings=warnings,
    )


# ---------------------------------------------------------------------------
# Entry points


def calibrate(
    state: NetworkState,
    telemetry: Sequence[TelemetryRecord],
    options: CalibrationOptions | None = None,
) -> CalibrationReport:
    """Refine twin parameters against telemetry; see the module docstring for
    the block decomposition. Parameters without covering telemetry stay at
    their prior values (the regulariser's fixed point) and are flagged."""
    options = options or CalibrationOptions()
    bad = set(options.param_mask) - set(PARAM_FAMILIES)
    if bad:
        raise CalibrationError(f"unknown parameter families {sorted(bad)}")
    span_ocm, amp_ocm, amp_total = _index_telemetry(state, telemetry)
    if not span_ocm and not amp_total:
        raise CalibrationError("no telemetry overlapping the calibratable parameters")

    network = state.network
    blocks: list[BlockResult] = []
    warnings: list[str] = []

    profile_links = set()
    wants_span_params = options.param_mask & {"connector_loss", "raman_scale"}
    for link in network.links:
        for span in link.spans:
            if options.span_ids is not None and span.span_id not in options.span_ids:
                continue
            has_pair = (span.span_id, "z0") in span_ocm and (span.span_id, "zmax") in span_ocm
            if has_pair and wants_span_params:
                blocks.append(
                    _span_block(
                        state,
                        span,
                        span_ocm[(span.span_id, "z0")],
                        span_ocm[(span.span_id, "zmax")],
                        options,
                    )
                )
                profile_links.add(link.link_id)
            elif wants_span_params and not has_pair and not amp_total:
                warnings.append(
                    f"span {span.span_id}: no OCM pair; parameters left at prior values"
                )

    if "ripple" in options.param_mask:
        for link in network.links:
            for idx, site in enumerate(link.amp_sites):
                for amp in site:
                    if options.amp_ids is not None and amp.amp_id not in options.amp_ids:
                        continue
                    cfg = state.amp_config(amp.amp_id)
                    m_in = span_ocm.get((link.spans[idx].span_id, "zmax"))
                    if idx + 1 < len(link.spans):
                        m_out = span_ocm.get((link.spans[idx + 1].span_id, "z0"))
                    else:
                        m_out = amp_ocm.get(amp.amp_id)
                    if m_in is None or m_out is None:
                        if (link.spans[idx].span_id, "zmax") in span_ocm or amp.amp_id in amp_ocm:
                            warnings.append(
                                f"amp {amp.amp_id}: not bracketed by OCM taps; ripple left at prior"
                            )
                        continue
                    blocks.append(_amp_block(state, cfg, m_in, m_out, options))

    if amp_total and "connector_loss" in options.param_mask:
        for link in network.links:
            if link.link_id in profile_links:
                continue
            link_amp_ids = {a.amp_id for site in link.amp_sites for a in site}
            usable = {aid: v for aid, v in amp_total.items() if aid in link_amp_ids}
            if usable:
                blocks.append(_totals_block(state, link, usable, options))

    if not blocks:
        raise CalibrationError("no telemetry overlapping the calibratable parameters")

    # combined objective over accepted steps: blocks are independent, so the
    # network-wide objective after each accepted step of the sequential
    # solves is the initial total minus all reductions banked so far
    initial_total = sum(b.objective_history[0] for b in blocks)
    combined = [initial_total]
    solved_reduction = 0.0
    for b in blocks:
        base = b.objective_history[0]
        for step_obj in b.objective_history[1:]:
            combined.append(initial_total - solved_reduction - (base - step_obj))
        solved_reduction += base - b.objective_history[-1]

    for b in blocks:
        warnings.extend(b.warnings)
    return CalibrationReport(
        blocks=blocks,
        objective_history=combined,
        residual_mse_db2=float(np.mean([b.residual_mse_db2 for b in blocks])),
        warnings=warnings,
    )


def apply_calibration(state: NetworkState, report: CalibrationReport) -> NetworkState:
    """New state with refined span parameters and per-amp ripple overrides."""
    refined_spans = report.refined_spans()
    network = state.network
    new_links = []
    for link in network.links:
        new_spans = []
        for span in link.spans:
            vals = refined_spans.get(span.span_id)
            if vals:
                updates = {}
                if "output_connector_loss_db" in vals:
                    updates["output_connector_loss_db"] = vals["output_connector_loss_db"]["refined"]
                if "raman_scale" in vals:
                    updates["raman_scale"] = vals["raman_scale"]["refined"]
                span = replace(span, **updates)
            new_spans.append(span)
        new_links.append(replace(link, spans=tuple(new_spans)))
    new_network = replace(network, links=tuple(new_links))

    new_state = NetworkState(
        network=new_network,
        lightpaths=state.lightpaths,
        edfa_overrides=(),
        failed_spans=state.failed_spans,
        transmit_drops=state.transmit_drops,
    )
    # keep explicit overrides that calibration did not touch
    refined_ripples = report.refined_ripples()
    overrides = []
    for amp_id, cfg in state.edfa_overrides:
        if amp_id not in refined_ripples:
            overrides.append(cfg)
    for amp_id, params in refined_ripples.items():
        base = dict(state.edfa_overrides).get(amp_id, new_network.amp(amp_id)[2])
        overrides.append(
            replace(
                base,
                ripple_db=tuple(params["ripple_db"]),
                ripple_nodes_thz=tuple(params["ripple_nodes_thz"]),
            )
        )
    return new_state.with_overrides(overrides)
