import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from optwin.spectral import (
    BandPlan,
    BandSpec,
    PowerSpectrum,
    SpectralError,
    build_grid,
    channel_stats,
    from_dbm,
    grid_from_document,
    grid_to_document,
    spectral_tilt,
    spectrum_from_document,
    spectrum_to_document,
    to_dbm,
)
from optwin.presets import BAND_PLANS


class TestBuildGrid:
    def test_system1_plan_yields_64_channels(self):
        grid = build_grid(BAND_PLANS["system1"])
        assert len(grid) == 64
        freqs = grid.frequencies_thz
        assert freqs[0] == pytest.approx(186.15)
        assert freqs[31] == pytest.approx(190.8)
        assert freqs[32] == pytest.approx(191.35)
        assert freqs[-1] == pytest.approx(196.0)

    def test_system3_plan_yields_96_channels(self):
        grid = build_grid(BAND_PLANS["system3"])
        assert len(grid) == 96
        assert grid.frequencies_thz[0] == pytest.approx(186.1)
        assert grid.frequencies_thz[-1] == pytest.approx(196.1)

    def test_system2_plan_yields_60_channels(self):
        grid = build_grid(BAND_PLANS["system2"])
        assert len(grid) == 60
        assert all(c.band == "C" for c in grid.channels)

    def test_frequencies_strictly_increasing(self):
        grid = build_grid(BAND_PLANS["system1"])
        assert np.all(np.diff(grid.frequencies_thz) > 0)

    def test_overlapping_bands_rejected(self):
        with pytest.raises(SpectralError):
            BandPlan(
                bands=(BandSpec("L", 186.0, 192.0, 10), BandSpec("C", 191.0, 196.0, 10)),
                spacing_ghz=100.0,
            )

    def test_non_positive_spacing_rejected(self):
        with pytest.raises(SpectralError):
            BandPlan(bands=(BandSpec("C", 191.0, 196.0, 10),), spacing_ghz=0.0)

    def test_deterministic(self):
        g1 = build_grid(BAND_PLANS["system1"])
        g2 = build_grid(BAND_PLANS["system1"])
        assert g1 == g2


class TestUnits:
    def test_one_mw_is_zero_dbm(self):
        assert to_dbm(1.0) == 0.0

    def test_watt_is_30_dbm(self):
        assert to_dbm(1000.0) == pytest.approx(30.0)

    def test_half_mw(self):
        assert to_dbm(0.5) == pytest.approx(-3.0103, abs=1e-4)

    def test_minus_inf_maps_to_zero(self):
        assert from_dbm(-math.inf) == 0.0

    def test_negative_power_rejected(self):
        with pytest.raises(SpectralError):
            to_dbm(-1.0)

    @given(st.floats(min_value=-9, max_value=6))
    @settings(max_examples=200, deadline=None)
    def test_round_trip(self, exponent):
        mw = 10.0**exponent
        assert abs(to_dbm(from_dbm(to_dbm(mw))) - to_dbm(mw)) <= 1e-12


@pytest.fixture
def grid10():
    return build_grid(
        BandPlan(bands=(BandSpec("C", 193.0, 193.9, 10),), spacing_ghz=100.0, symbol_bandwidth_ghz=50.0)
    )


class TestTilt:
    def test_flat_spectrum_zero(self, grid10):
        sp = PowerSpectrum(grid10, np.ones(10))
        assert spectral_tilt(sp) == pytest.approx(0.0, abs=1e-12)

    def test_exact_ramp(self, grid10):
        f = grid10.frequencies_thz
        dbm = (f - f[0]) * 1.0  # +1 dB per THz
        sp = PowerSpectrum(grid10, [from_dbm(x) for x in dbm])
        assert spectral_tilt(sp) == pytest.approx(1.0, abs=1e-9)

    def test_fewer_than_two_lit_rejected(self, grid10):
        powers = np.zeros(10)
        powers[3] = 1.0
        with pytest.raises(SpectralError):
            spectral_tilt(PowerSpectrum(grid10, powers))

    @given(st.floats(min_value=-20, max_value=20))
    @settings(max_examples=50, deadline=None)
    def test_uniform_offset_invariance(self, offset_db):
        plan = BandPlan(bands=(BandSpec("C", 193.0, 193.9, 10),), spacing_ghz=100.0, symbol_bandwidth_ghz=50.0)
        grid = build_grid(plan)
        rng = np.random.default_rng(7)
        base_dbm = rng.uniform(-3, 3, 10)
        sp1 = PowerSpectrum(grid, [from_dbm(x) for x in base_dbm])
        sp2 = PowerSpectrum(grid, [from_dbm(x + offset_db) for x in base_dbm])
        assert spectral_tilt(sp1) == pytest.approx(spectral_tilt(sp2), abs=1e-9)


class TestChannelStats:
    def test_all_dark(self, grid10):
        sp = PowerSpectrum(grid10, np.zeros(10))
        stats = channel_stats(sp)
        assert stats == {"total_mw": 0.0, "mean_dbm": None, "lit_count": 0}

    def test_uniform_64(self):
        grid = build_grid(BAND_PLANS["system1"])
        stats = channel_stats(PowerSpectrum(grid, np.ones(64)))
        assert stats["total_mw"] == pytest.approx(64.0)
        assert stats["mean_dbm"] == pytest.approx(0.0)
        assert stats["lit_count"] == 64

    def test_sixteen_dropped(self):
        grid = build_grid(BAND_PLANS["system1"])
        powers = np.ones(64)
        powers[10:26] = 0.0
        stats = channel_stats(PowerSpectrum(grid, powers))
        assert stats["total_mw"] == pytest.approx(48.0)
        assert stats["lit_count"] == 48


class TestSpectrumInvariants:
    def test_dark_channel_with_power_rejected(self, grid10):
        with pytest.raises(SpectralError):
            PowerSpectrum(grid10, np.ones(10), occupancy=["dark"] * 10)

    def test_negative_power_rejected(self, grid10):
        powers = np.ones(10)
        powers[0] = -0.1
        with pytest.raises(SpectralError):
            PowerSpectrum(grid10, powers)

    def test_length_mismatch_rejected(self, grid10):
        with pytest.raises(SpectralError):
            PowerSpectrum(grid10, np.ones(9))


class TestSerialization:
    def test_grid_round_trip(self):
        grid = build_grid(BAND_PLANS["system3"])
        assert grid_from_document(grid_to_document(grid)) == grid

    def test_spectrum_round_trip(self, grid10):
        powers = np.linspace(0, 2.0, 10)
        sp = PowerSpectrum(grid10, powers)
        doc = spectrum_to_document(sp)
        assert doc[0]["power_dbm"] is None  # dark channel serialises as null
        back = spectrum_from_document(grid10, doc)
        assert np.allclose(back.powers_mw, sp.powers_mw, rtol=1e-12)
        assert back.occupancy == sp.occupancy
