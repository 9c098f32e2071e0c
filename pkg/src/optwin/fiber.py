"""Single-span fiber physics.

Coupled power-evolution ODE under inter-channel stimulated Raman scattering,
lumped connector losses at the span ends, and a closed-form Gaussian-noise
estimate of nonlinear interference with SRS entering through per-channel
effective lengths.

Unit conventions inside this module: z in km, frequencies in THz, powers in
mW at interfaces (converted to W inside the ODE), attenuation stored as
dB/km, gamma in 1/(W km), beta2 in ps^2/km. With those choices
``beta2 * B_thz**2 * L_km`` is dimensionless, which keeps the GN formulas
unit-free.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .spectral import ChannelGrid, PowerSpectrum

LN10_OVER_10 = math.log(10.0) / 10.0


class PropagationError(RuntimeError):
    """Integration produced a non-finite state."""


@dataclass(frozen=True)
class SpanParams:
    """Physical description of one fiber span.

    ``raman_slope`` is the triangular Raman-gain slope in 1/(W km THz) with
    the effective area already folded in; ``raman_scale`` is the
    dimensionless calibration multiplier on top of it.
    """

    length_km: float
    attenuation_db_per_km: float | tuple[tuple[float, float], ...] = 0.20
    raman_slope: float = 0.028
    raman_scale: float = 1.0
    raman_cutoff_thz: float = 14.0
    input_connector_loss_db: float = 0.5
    output_connector_loss_db: float = 0.5
    gamma: float = 1.3
    beta2_ps2_per_km: float = -21.7
    effective_area_folded: bool = True
    span_id: str = ""

    def __post_init__(self):
        if self.length_km <= 0:
            raise ValueError("span length must be positive")
        if not 0.2 <= self.raman_scale <= 5.0:
            raise ValueError("raman_scale outside [0.2, 5]")
        for loss in (self.input_connector_loss_db, self.output_connector_loss_db):
            if not 0.0 <= loss <= 10.0:
                raise ValueError("connector losses must lie in [0, 10] dB")
        if self.raman_cutoff_thz <= 0:
            raise ValueError("raman cutoff must be positive")
        # alpha = 0 is admitted for conservation oracles; negative is not
        alpha = self.attenuation_db_per_km
        if isinstance(alpha, (int, float)):
            if alpha < 0:
                raise ValueError("attenuation must be non-negative")
        else:
            if not alpha or any(a < 0 for _, a in alpha):
                raise ValueError("attenuation must be non-negative over the band")

    def attenuation_db_vector(self, grid: ChannelGrid) -> np.ndarray:
        """Per-channel attenuation in dB/km (piecewise-linear in frequency)."""
        alpha = self.attenuation_db_per_km
        if isinstance(alpha, (int, float)):
            return np.full(len(grid), float(alpha))
        nodes = sorted(alpha)
        f = grid.frequencies_thz
        return np.interp(f, [n[0] for n in nodes], [n[1] for n in nodes])


def raman_gain(delta_f_thz, params: SpanParams):
    """Triangular Raman gain profile in 1/(W km) for a pump/signal separation.

    Positive separations up to the cutoff get scale*slope*delta_f; everything
    else (including zero) is 0. Antisymmetry between donor and acceptor is
    handled by the ODE, not here.
    """
    df = np.asarray(delta_f_thz, dtype=float)
    gain = params.raman_scale * params.raman_slope * df
    gain = np.where((df > 0) & (df <= params.raman_cutoff_thz), gain, 0.0)
    if np.isscalar(delta_f_thz):
        return float(gain)
    return gain


@dataclass(frozen=True)
class PropagationOptions:
    step_km: float = 0.1
    sample_every_km: float = 1.0
    srs_enabled: bool = True

    def __post_init__(self):
        if self.step_km <= 0:
            raise ValueError("step_km must be positive")


@dataclass(frozen=True)
class PropagationResult:
    output: PowerSpectrum
    #: (z_km, PowerSpectrum); z=0 holds the pre-connector launch and
    #: z=length the post-connector output, matching the OCM tap points.
    sampled_profile: tuple[tuple[float, PowerSpectrum], ...]
    #: fiber-internal trapezoidal integral(P dz)/P(0), used by the GN terms
    effective_length_km: np.ndarray
    srs_enabled: bool


def _srs_matrix(grid: ChannelGrid, params: SpanParams) -> np.ndarray:
    """K[i, j] so that dP_i/dz includes P_i * sum_j K[i, j] P_j (powers in W).

    Rows gain from higher-frequency columns and lose to lower-frequency ones,
    with the photon-energy ratio f_i/f_j on the loss side so that the SRS
    terms conserve total photon flux.
    """
    f = grid.frequencies_thz
    df = f[None, :] - f[:, None]  # df[i, j] = f_j - f_i
    gain = raman_gain(np.abs(df), params)
    k = np.where(df > 0, gain, 0.0)
    ratio = np.divide(f[:, None], f[None, :])
    k = k - np.where(df < 0, gain * ratio, 0.0)
    return k


def propagate(
    span: SpanParams,
    input_spectrum: PowerSpectrum,
    options: PropagationOptions | None = None,
) -> PropagationResult:
    """Integrate the coupled SRS power-evolution ODE over one span.

    dP_i/dz = -alpha_i P_i
              + P_i * sum_{f_j > f_i} C_R(f_j - f_i) P_j
              - P_i * sum_{f_j < f_i} (f_i/f_j) C_R(f_i - f_j) P_j

    Connector losses are lumped dB drops applied exactly once before and
    after the distributed section. With SRS disabled the profile is the
    closed-form exponential, evaluated exactly.
    """
    opts = options or PropagationOptions()
    grid = input_spectrum.grid
    alpha_db = span.attenuation_db_vector(grid)
    alpha_lin = alpha_db * LN10_OVER_10  # power nepers/km
    length = span.length_km

    p_launch = input_spectrum.powers_mw
    in_loss = 10.0 ** (-span.input_connector_loss_db / 10.0)
    out_loss = 10.0 ** (-span.output_connector_loss_db / 10.0)
    p_fiber0 = p_launch * in_loss

    sample_zs = _sample_positions(length, opts.sample_every_km)

    if not opts.srs_enabled:
        profile_at = lambda z: p_fiber0 * np.exp(-alpha_lin * z)
        p_fiber_end = profile_at(length)
        with np.errstate(divide="ignore", invalid="ignore"):
            l_eff = np.where(
                alpha_lin > 0,
                (1.0 - np.exp(-alpha_lin * length)) / np.where(alpha_lin > 0, alpha_lin, 1.0),
                length,
            )
        l_eff = np.where(p_fiber0 > 0, l_eff, 0.0)
        samples = _assemble_samples(
            input_spectrum, sample_zs, profile_at, p_launch, p_fiber_end * out_loss, length
        )
        output = input_spectrum.with_powers(p_fiber_end * out_loss)
        return PropagationResult(output, samples, l_eff, srs_enabled=False)

    k_matrix = _srs_matrix(grid, span)
    p = p_fiber0 * 1e-3  # W
    n_steps = max(1, int(math.ceil(length / opts.step_km)))
    h = length / n_steps

    def rhs(state: np.ndarray) -> np.ndarray:
        return state * (k_matrix @ state - alpha_lin)

    interior: dict[float, np.ndarray] = {}
    next_sample = 0
    integral = np.zeros_like(p)  # integral of P dz in W km
    z = 0.0
    for step in range(n_steps):
        while next_sample < len(sample_zs) and sample_zs[next_sample] <= z + 1e-9:
            interior[sample_zs[next_sample]] = p * 1e3
            next_sample += 1
        k1 = rhs(p)
        k2 = rhs(p + 0.5 * h * k1)
        k3 = rhs(p + 0.5 * h * k2)
        k4 = rhs(p + h * k3)
        p_next = p + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        integral += 0.5 * h * (p + p_next)
        p = p_next
        z = (step + 1) * h
        if not np.all(np.isfinite(p)):
            raise PropagationError(f"non-finite power state at z = {z:.3f} km")
    interior[length] = p * 1e3

    p_fiber_end_mw = p * 1e3
    with np.errstate(divide="ignore", invalid="ignore"):
        l_eff = np.where(p_fiber0 > 0, integral * 1e3 / np.where(p_fiber0 > 0, p_fiber0, 1.0), 0.0)

    def profile_at(zq: float) -> np.ndarray:
        return interior[zq]

    samples = _assemble_samples(
        input_spectrum, sample_zs, profile_at, p_launch, p_fiber_end_mw * out_loss, length
    )
    output = input_spectrum.with_powers(p_fiber_end_mw * out_loss)
    return PropagationResult(output, samples, l_eff, srs_enabled=True)


def _sample_positions(length: float, every_km: float) -> list[float]:
    if every_km <= 0:
        return [0.0, length]
    zs = [i * every_km for i in range(1, int(length / every_km) + 1) if i * every_km < length - 1e-9]
    return [0.0] + zs + [length]


def _assemble_samples(
    input_spectrum: PowerSpectrum,
    sample_zs: Sequence[float],
    profile_at,
    p_launch: np.ndarray,
    p_output: np.ndarray,
    length: float,
) -> tuple[tuple[float, PowerSpectrum], ...]:
    samples = []
    for z in sample_zs:
        if z <= 0.0:
            powers = p_launch
        elif z >= length:
            powers = p_output
        else:
            powers = profile_at(z)
        samples.append((float(z), input_spectrum.with_powers(powers)))
    return tuple(samples)


def effective_lengths(prop: PropagationResult) -> np.ndarray:
    """Trapezoidal integral(P_i dz)/P_i(0) over the sampled profile, in km.

    The sampled profile carries the lumped connector drops at its endpoints
    (OCM tap convention); for GN calculations prefer the field
    ``effective_length_km`` which integrates the fiber-internal profile.
    Dark channels map to 0 by convention.
    """
    if len(prop.sampled_profile) < 2:
        raise ValueError("need at least two profile samples")
    zs = np.array([z for z, _ in prop.sampled_profile])
    powers = np.stack([s.powers_mw for _, s in prop.sampled_profile], axis=1)
    trapezoid = getattr(np, "trapezoid", None) or np.trapz
    integral = trapezoid(powers, zs, axis=1)
    p0 = powers[:, 0]
    return np.where(p0 > 0, integral / np.where(p0 > 0, p0, 1.0), 0.0)


def nli_for_span(
    span: SpanParams,
    launch: PowerSpectrum,
    prop: PropagationResult,
) -> np.ndarray:
    """Per-channel nonlinear interference power (mW) for one span,
    referenced to the span output.

    Incoherent closed-form GN: P_nli_i = eta_sci_i P_i^3 + sum_j eta_xci_ij
    P_j^2 P_i with fiber-launch powers in W. SRS enters through the
    SRS-resolved effective lengths; the result is carried to the span output
    with the same per-channel transfer the signal saw.
    """
    grid = launch.grid
    beta2 = abs(span.beta2_ps2_per_km)
    if beta2 == 0:
        raise ValueError("GN closed form undefined for beta2 = 0")
    gamma = span.gamma
    alpha_lin = span.attenuation_db_vector(grid) * LN10_OVER_10
    # asymptotic effective length 1/(2*alpha_field) = 1/alpha_power
    l_eff_a = np.where(alpha_lin > 1e-9, 1.0 / np.maximum(alpha_lin, 1e-9), span.length_km)
    l_eff = prop.effective_length_km

    in_loss = 10.0 ** (-span.input_connector_loss_db / 10.0)
    p_w = launch.powers_mw * in_loss * 1e-3
    lit = p_w > 0

    f = grid.frequencies_thz
    b = grid.bandwidths_thz

    sci_arg = (math.pi**2 / 2.0) * beta2 * l_eff_a * b**2
    eta_sci = (8.0 / 27.0) * gamma**2 * l_eff**2 * np.arcsinh(sci_arg) / (math.pi * beta2 * l_eff_a * b**2)

    df = np.abs(f[:, None] - f[None, :])
    np.fill_diagonal(df, 1e9)  # placeholder; diagonal zeroed below
    ratio = np.log(np.abs((df + b[None, :] / 2.0) / (df - b[None, :] / 2.0)))
    np.fill_diagonal(ratio, 0.0)
    # denominator uses B_j^2 so eta carries 1/W^2 against P_j^2 * P_i
    eta_xci = (16.0 / 27.0) * gamma**2 * (l_eff[:, None] ** 2) * ratio / (
        2.0 * math.pi * beta2 * l_eff_a[:, None] * (b[None, :] ** 2)
    )

    p_nli_w = eta_sci * p_w**3 + ((eta_xci * (p_w[None, :] ** 2)).sum(axis=1)) * p_w
    p_nli_w = np.where(lit, p_nli_w, 0.0)

    # carry to span output with the per-channel transfer the signal saw
    transfer = np.where(
        launch.powers_mw > 0,
        prop.output.powers_mw / np.where(launch.powers_mw > 0, launch.powers_mw, 1.0),
        0.0,
    ) / in_loss
    return p_nli_w * 1e3 * transfer
