"""Span physics against independent oracles: a fine-step plain-float RK4 for
the SRS ODE and a 2-D trapezoidal integration of the GN reference integrand
for the closed-form NLI."""
import math

import numpy as np
import pytest

from optwin.fiber import (
    PropagationError,
    PropagationOptions,
    SpanParams,
    effective_lengths,
    nli_for_span,
    propagate,
    raman_gain,
)
from optwin.presets import BAND_PLANS
from optwin.spectral import BandPlan, BandSpec, PowerSpectrum, build_grid

LN10_OVER_10 = math.log(10) / 10


def simple_grid(n, f0=191.0, spacing_ghz=100.0, bw_ghz=50.0, band="C"):
    f_max = f0 + (n - 1) * spacing_ghz * 1e-3
    return build_grid(
        BandPlan(bands=(BandSpec(band, f0, f_max, n),), spacing_ghz=spacing_ghz, symbol_bandwidth_ghz=bw_ghz)
    )


class TestRamanGain:
    def test_zero_offset_no_self_transfer(self):
        span = SpanParams(length_km=80)
        assert raman_gain(0.0, span) == 0.0

    def test_outside_window(self):
        span = SpanParams(length_km=80, raman_cutoff_thz=14.0)
        assert raman_gain(15.0, span) == 0.0

    def test_linear_inside_window(self):
        span = SpanParams(length_km=80, raman_slope=0.028, raman_scale=1.0)
        assert raman_gain(7.5, span) == pytest.approx(0.21)

    def test_scale_multiplies(self):
        span = SpanParams(length_km=80, raman_slope=0.028, raman_scale=1.5)
        assert raman_gain(7.5, span) == pytest.approx(0.315)


class TestPropagate:
    def test_pure_attenuation_exact(self):
        grid = simple_grid(4)
        span = SpanParams(
            length_km=100.0,
            attenuation_db_per_km=0.2,
            input_connector_loss_db=0.0,
            output_connector_loss_db=0.0,
        )
        sp = PowerSpectrum(grid, np.full(4, 1.0))
        res = propagate(span, sp, PropagationOptions(srs_enabled=False))
        loss_db = 10 * np.log10(sp.powers_mw / res.output.powers_mw)
        assert np.all(np.abs(loss_db - 20.0) < 1e-9)

    def test_single_channel_srs_identity(self):
        grid = simple_grid(3)
        span = SpanParams(
            length_km=80.0,
            attenuation_db_per_km=0.0,
            input_connector_loss_db=0.0,
            output_connector_loss_db=0.0,
        )
        powers = np.array([0.0, 1.5, 0.0])
        sp = PowerSpectrum(grid, powers)
        res = propagate(span, sp)
        assert np.array_equal(res.output.powers_mw, powers)

    def test_two_channel_srs_vs_fine_step_oracle(self):
        """2 channels at 191 and 196 THz, alpha=0, 80 km: match an
        independently coded plain-float RK4 at 1000x finer step."""
        grid = build_grid(
            BandPlan(bands=(BandSpec("C", 191.0, 196.0, 2),), spacing_ghz=5000.0, symbol_bandwidth_ghz=50.0)
        )
        span = SpanParams(
            length_km=80.0,
            attenuation_db_per_km=0.0,
            input_connector_loss_db=0.0,
            output_connector_loss_db=0.0,
        )
        sp = PowerSpectrum(grid, [1.0, 1.0])
        step = 0.1
        res = propagate(span, sp, PropagationOptions(step_km=step))

        # oracle: scalar RK4, step/1000, independent formulation
        c = span.raman_scale * span.raman_slope * 5.0  # 1/(W km)
        f1, f2 = 191.0, 196.0

        def deriv(p1, p2):
            return c * p1 * p2, -(f2 / f1) * c * p1 * p2

        h = step / 1000.0
        p1, p2 = 1e-3, 1e-3
        n = int(round(80.0 / h))
        for _ in range(n):
            a1, a2 = deriv(p1, p2)
            b1, b2 = deriv(p1 + h / 2 * a1, p2 + h / 2 * a2)
            c1, c2 = deriv(p1 + h / 2 * b1, p2 + h / 2 * b2)
            d1, d2 = deriv(p1 + h * c1, p2 + h * c2)
            p1 += h / 6 * (a1 + 2 * b1 + 2 * c1 + d1)
            p2 += h / 6 * (a2 + 2 * b2 + 2 * c2 + d2)
        oracle = np.array([p1, p2]) * 1e3
        diff_db = 10 * np.log10(res.output.powers_mw / oracle)
        assert np.max(np.abs(diff_db)) < 1e-6
        assert res.output.powers_mw[0] > 1.0  # lower frequency gains
        assert res.output.powers_mw[1] < 1.0

    def test_photon_flux_conserved(self):
        grid = simple_grid(8, f0=188.0, spacing_ghz=1000.0)
        span = SpanParams(
            length_km=60.0,
            attenuation_db_per_km=0.0,
            input_connector_loss_db=0.0,
            output_connector_loss_db=0.0,
        )
        sp = PowerSpectrum(grid, np.linspace(0.5, 2.0, 8))
        res = propagate(span, sp)
        f = grid.frequencies_thz
        flux0 = float((sp.powers_mw / f).sum())
        flux1 = float((res.output.powers_mw / f).sum())
        assert abs(flux1 - flux0) <= 1e-9 * flux0

    def test_step_halving_converged(self):
        grid = build_grid(BAND_PLANS["system1"])
        span = SpanParams(length_km=100.0, attenuation_db_per_km=0.17, gamma=0.8, beta2_ps2_per_km=-26.0)
        sp = PowerSpectrum(grid, np.ones(64))
        a = propagate(span, sp, PropagationOptions(step_km=0.1))
        b = propagate(span, sp, PropagationOptions(step_km=0.05))
        diff = np.abs(10 * np.log10(a.output.powers_mw / b.output.powers_mw))
        assert np.max(diff) < 0.01

    def test_energy_monotone_with_loss(self):
        grid = simple_grid(6, f0=190.0, spacing_ghz=500.0)
        span = SpanParams(length_km=50.0, attenuation_db_per_km=0.2,
                          input_connector_loss_db=0.0, output_connector_loss_db=0.0)
        sp = PowerSpectrum(grid, np.ones(6))
        res = propagate(span, sp)
        assert res.output.powers_mw.sum() < sp.powers_mw.sum()

    def test_superposition_without_srs(self):
        grid = simple_grid(5)
        span = SpanParams(length_km=70.0, input_connector_loss_db=0.0, output_connector_loss_db=0.0)
        p = np.linspace(0.2, 1.0, 5)
        out1 = propagate(span, PowerSpectrum(grid, p), PropagationOptions(srs_enabled=False)).output.powers_mw
        out2 = propagate(span, PowerSpectrum(grid, 2 * p), PropagationOptions(srs_enabled=False)).output.powers_mw
        assert np.allclose(out2, 2 * out1, rtol=1e-12)

    def test_connector_losses_applied_once(self):
        grid = simple_grid(2)
        span = SpanParams(
            length_km=10.0,
            attenuation_db_per_km=0.2,
            input_connector_loss_db=1.0,
            output_connector_loss_db=2.0,
        )
        sp = PowerSpectrum(grid, np.ones(2))
        res = propagate(span, sp, PropagationOptions(srs_enabled=False))
        expected_db = 10 * 0.2 + 1.0 + 2.0
        loss_db = 10 * np.log10(sp.powers_mw / res.output.powers_mw)
        assert np.allclose(loss_db, expected_db, atol=1e-9)
        # the z=0 sample is the pre-connector launch, the last the final output
        assert np.allclose(res.sampled_profile[0][1].powers_mw, sp.powers_mw)
        assert np.allclose(res.sampled_profile[-1][1].powers_mw, res.output.powers_mw)


class TestEffectiveLengths:
    def test_lossless_equals_length(self):
        grid = simple_grid(3)
        span = SpanParams(length_km=42.0, attenuation_db_per_km=0.0,
                          input_connector_loss_db=0.0, output_connector_loss_db=0.0)
        sp = PowerSpectrum(grid, np.ones(3))
        res = propagate(span, sp, PropagationOptions(srs_enabled=False))
        assert np.allclose(effective_lengths(res), 42.0, atol=1e-9)
        assert np.allclose(res.effective_length_km, 42.0, atol=1e-9)

    def test_standard_attenuation_closed_form(self):
        grid = simple_grid(3)
        span = SpanParams(length_km=100.0, attenuation_db_per_km=0.2,
                          input_connector_loss_db=0.0, output_connector_loss_db=0.0)
        sp = PowerSpectrum(grid, np.ones(3))
        res = propagate(span, sp, PropagationOptions(srs_enabled=False))
        alpha = 0.2 * LN10_OVER_10
        expected = (1 - math.exp(-alpha * 100.0)) / alpha
        assert np.allclose(effective_lengths(res), expected, atol=0.2)
        assert np.allclose(res.effective_length_km, expected, atol=1e-6)

    def test_srs_pumps_l_band_effective_length(self):
        grid = build_grid(BAND_PLANS["system1"])
        span = SpanParams(length_km=100.0, attenuation_db_per_km=0.17, gamma=0.8, beta2_ps2_per_km=-26.0)
        sp = PowerSpectrum(grid, np.ones(64))
        res = propagate(span, sp)
        l_band = res.effective_length_km[:32].mean()
        c_band = res.effective_length_km[32:].mean()
        assert l_band > c_band

    def test_dark_channels_zero(self):
        grid = simple_grid(3)
        span = SpanParams(length_km=50.0)
        powers = np.array([1.0, 0.0, 1.0])
        res = propagate(span, PowerSpectrum(grid, powers))
        assert res.effective_length_km[1] == 0.0


class TestNli:
    @pytest.fixture
    def toy(self):
        grid = simple_grid(3, f0=193.0, spacing_ghz=100.0, bw_ghz=50.0)
        span = SpanParams(
            length_km=80.0,
            attenuation_db_per_km=0.2,
            gamma=1.3,
            beta2_ps2_per_km=-21.7,
            input_connector_loss_db=0.0,
            output_connector_loss_db=0.0,
        )
        launch = PowerSpectrum(grid, np.ones(3))
        prop = propagate(span, launch, PropagationOptions(srs_enabled=False))
        return grid, span, launch, prop

    def test_cubic_homogeneity_without_srs(self, toy):
        grid, span, launch, prop = toy
        nli1 = nli_for_span(span, launch, prop)
        launch2 = PowerSpectrum(grid, 2 * launch.powers_mw)
        prop2 = propagate(span, launch2, PropagationOptions(srs_enabled=False))
        nli2 = nli_for_span(span, launch2, prop2)
        assert np.allclose(nli2, 8 * nli1, rtol=1e-12)

    def test_single_channel_sci_only(self):
        grid = simple_grid(3, f0=193.0)
        span = SpanParams(length_km=80.0, input_connector_loss_db=0.0, output_connector_loss_db=0.0)
        powers = np.array([0.0, 1.0, 0.0])
        launch = PowerSpectrum(grid, powers)
        prop = propagate(span, launch, PropagationOptions(srs_enabled=False))
        nli = nli_for_span(span, launch, prop)
        assert nli[0] == 0.0 and nli[2] == 0.0
        assert nli[1] > 0.0

    def test_dark_channels_zero(self, toy):
        grid, span, launch, prop = toy
        nli = nli_for_span(span, launch, prop)
        assert np.all(nli >= 0)

    def test_zero_dispersion_rejected(self, toy):
        grid, span, launch, prop = toy
        bad = SpanParams(
            length_km=80.0, beta2_ps2_per_km=0.0,
            input_connector_loss_db=0.0, output_connector_loss_db=0.0,
        )
        with pytest.raises(ValueError):
            nli_for_span(bad, launch, prop)

    def test_closed_form_vs_integral_oracle(self, toy):
        """3-channel fixture against trapezoidal 2-D integration of the GN
        reference integrand, within 1.5 dB."""
        grid, span, launch, prop = toy
        nli_cf = nli_for_span(span, launch, prop)
        transfer = prop.output.powers_mw / launch.powers_mw
        nli_cf_launch_ref = nli_cf / transfer

        alpha_field = 0.2 * LN10_OVER_10 / 2.0
        beta2 = -21.7
        gamma = 1.3
        length = 80.0
        bw = 0.05
        f0 = grid.frequencies_thz
        g_psd = (launch.powers_mw * 1e-3) / bw

        def psd(f):
            out = np.zeros_like(f)
            for fc, g in zip(f0, g_psd):
                out += np.where(np.abs(f - fc) <= bw / 2, g, 0.0)
            return out

        def chi(f1, f2, f):
            theta = 4 * math.pi**2 * beta2 * (f1 - f) * (f2 - f)
            num = 1.0 - np.exp(-2 * alpha_field * length) * np.exp(1j * theta * length)
            den = 2 * alpha_field - 1j * theta
            return np.abs(num / den) ** 2

        fgrid = np.linspace(f0[0] - 1.5 * bw, f0[-1] + 1.5 * bw, 1001)
        df = fgrid[1] - fgrid[0]
        f1m, f2m = np.meshgrid(fgrid, fgrid, indexing="ij")
        g1 = psd(f1m)
        g2 = psd(f2m)
        for i, fi in enumerate(f0):
            g3 = psd(f1m + f2m - fi)
            g_nli = (16.0 / 27.0) * gamma**2 * np.sum(g1 * g2 * g3 * chi(f1m, f2m, fi)) * df * df
            oracle_mw = g_nli * bw * 1e3
            delta_db = abs(10 * math.log10(nli_cf_launch_ref[i] / oracle_mw))
            assert delta_db < 1.5
