import math

import numpy as np
import pytest

from optwin.amplifier import (
    B_REF_HZ,
    PLANCK_J_S,
    AmplifierError,
    EdfaConfig,
    apply_amp_site,
    apply_edfa,
    ase_accumulate,
    edfa_from_document,
    edfa_to_document,
    gain_db_at,
)
from optwin.spectral import BandPlan, BandSpec, PowerSpectrum, build_grid


def c_grid(n=8, f0=191.0, spacing=100.0):
    f_max = f0 + (n - 1) * spacing * 1e-3
    return build_grid(BandPlan(bands=(BandSpec("C", f0, f_max, n),), spacing_ghz=spacing, symbol_bandwidth_ghz=50.0))


def flat_amp(gain=20.0, band_range=(191.0, 191.7), **kw):
    return EdfaConfig(amp_id="a1", band="C", target_gain_db=gain, band_range_thz=band_range, **kw)


class TestGainAt:
    def test_flat(self):
        cfg = flat_amp(gain=20.0)
        for f in (191.0, 191.35, 191.7):
            assert gain_db_at(cfg, f) == pytest.approx(20.0)

    def test_tilt_anchored_at_centre(self):
        cfg = flat_amp(gain=20.0, tilt_db=2.0)
        assert gain_db_at(cfg, 191.7) == pytest.approx(21.0)  # high edge +1
        assert gain_db_at(cfg, 191.0) == pytest.approx(19.0)  # low edge -1
        assert gain_db_at(cfg, 191.35) == pytest.approx(20.0)

    def test_ripple_reproduced_at_nodes(self):
        nodes = (191.0, 191.2, 191.5, 191.7)
        ripple = (0.3, -0.2, 0.1, -0.4)
        cfg = flat_amp(gain=18.0, ripple_db=ripple, ripple_nodes_thz=nodes)
        for f, r in zip(nodes, ripple):
            assert gain_db_at(cfg, f) == pytest.approx(18.0 + r, abs=1e-12)

    def test_voa_subtracts(self):
        cfg = flat_amp(gain=20.0, voa_out_db=3.0)
        assert gain_db_at(cfg, 191.3) == pytest.approx(17.0)

    def test_out_of_band_rejected(self):
        cfg = flat_amp()
        with pytest.raises(AmplifierError):
            gain_db_at(cfg, 195.0)


class TestApplyEdfa:
    def test_zero_gain_identity(self):
        grid = c_grid()
        cfg = EdfaConfig(amp_id="a1", band="C", target_gain_db=0.0,
                         band_range_thz=grid.band_range_thz("C"))
        sp = PowerSpectrum(grid, np.linspace(0.1, 1.0, 8))
        res = apply_edfa(cfg, sp)
        assert np.allclose(res.output.powers_mw, sp.powers_mw, rtol=1e-12)
        assert np.all(res.ase_mw == 0.0)

    def test_ase_hand_value(self):
        """Single channel at 193.5 THz, G=20 dB, NF=5 dB, B_ref=12.5 GHz."""
        grid = build_grid(BandPlan(bands=(BandSpec("C", 193.5, 193.5 + 0.0, 1),),
                                   spacing_ghz=100.0, symbol_bandwidth_ghz=50.0))
        cfg = EdfaConfig(amp_id="a1", band="C", target_gain_db=20.0, noise_figure_db=5.0,
                         band_range_thz=(193.5, 193.5))
        sp = PowerSpectrum(grid, [1.0])
        res = apply_edfa(cfg, sp)
        expected_w = PLANCK_J_S * 193.5e12 * 10**0.5 * (100 - 1) * 12.5e9
        assert res.ase_mw[0] == pytest.approx(expected_w * 1e3, rel=1e-12)
        # the stated formula evaluates to ~5.0e-4 mW
        assert res.ase_mw[0] == pytest.approx(5.017e-4, rel=1e-3)

    def test_clamp_boundary(self):
        grid = c_grid()
        cfg = EdfaConfig(amp_id="a1", band="C", target_gain_db=20.0,
                         band_range_thz=grid.band_range_thz("C"), max_total_output_dbm=20.0)
        sp = PowerSpectrum(grid, np.full(8, 1.0))  # 8 mW in, 800 mW out > 100 mW cap
        res = apply_edfa(cfg, sp)
        assert res.clamped
        assert res.output.total_mw() == pytest.approx(100.0, rel=1e-12)

    def test_clamp_preserves_shape(self):
        grid = c_grid()
        powers = np.linspace(0.5, 2.0, 8)
        capped = EdfaConfig(amp_id="a1", band="C", target_gain_db=20.0,
                            band_range_thz=grid.band_range_thz("C"), max_total_output_dbm=15.0)
        free = EdfaConfig(amp_id="a1", band="C", target_gain_db=20.0,
                          band_range_thz=grid.band_range_thz("C"), max_total_output_dbm=40.0)
        out_capped = apply_edfa(capped, PowerSpectrum(grid, powers)).output.powers_mw
        out_free = apply_edfa(free, PowerSpectrum(grid, powers)).output.powers_mw
        ratios = out_capped / out_free
        assert np.max(ratios) - np.min(ratios) < 1e-12 * np.max(ratios)

    def test_flat_gain_uniform_ratio(self):
        grid = c_grid()
        cfg = EdfaConfig(amp_id="a1", band="C", target_gain_db=17.0, noise_figure_db=3.0,
                         band_range_thz=grid.band_range_thz("C"))
        powers = np.linspace(0.5, 2.0, 8)
        res = apply_edfa(cfg, PowerSpectrum(grid, powers))
        signal_out = res.output.powers_mw - res.ase_mw
        ratios = signal_out / powers
        assert np.max(ratios) - np.min(ratios) < 1e-12 * np.max(ratios)

    def test_band_mismatch_rejected(self):
        grid = build_grid(BandPlan(bands=(BandSpec("L", 186.5, 186.6, 2), BandSpec("C", 191.5, 191.6, 2)),
                                   spacing_ghz=100.0, symbol_bandwidth_ghz=50.0))
        cfg = EdfaConfig(amp_id="a1", band="C", target_gain_db=10.0,
                         band_range_thz=grid.band_range_thz("C"))
        sp = PowerSpectrum(grid, np.ones(4))
        with pytest.raises(AmplifierError):
            apply_edfa(cfg, sp)

    def test_ase_monotone_in_nf_and_gain(self):
        grid = c_grid(1)
        prev_nf = 0.0
        for nf in np.linspace(3.0, 10.0, 8):
            cfg = EdfaConfig(amp_id="a", band="C", target_gain_db=15.0, noise_figure_db=float(nf),
                             band_range_thz=(191.0, 191.0))
            res = apply_edfa(cfg, PowerSpectrum(grid, [1.0]))
            assert res.ase_mw[0] > prev_nf
            prev_nf = res.ase_mw[0]
        prev_g = 0.0
        for g in np.linspace(1.0, 30.0, 12):
            cfg = EdfaConfig(amp_id="a", band="C", target_gain_db=float(g), noise_figure_db=5.0,
                             band_range_thz=(191.0, 191.0))
            res = apply_edfa(cfg, PowerSpectrum(grid, [1.0]))
            assert res.ase_mw[0] > prev_g or g == 1.0
            prev_g = res.ase_mw[0]


class TestAmpSite:
    def test_two_band_site(self):
        grid = build_grid(BandPlan(bands=(BandSpec("L", 186.5, 186.7, 3), BandSpec("C", 191.5, 191.7, 3)),
                                   spacing_ghz=100.0, symbol_bandwidth_ghz=50.0))
        c_cfg = EdfaConfig(amp_id="c", band="C", target_gain_db=10.0, band_range_thz=grid.band_range_thz("C"))
        l_cfg = EdfaConfig(amp_id="l", band="L", target_gain_db=12.0, band_range_thz=grid.band_range_thz("L"))
        sp = PowerSpectrum(grid, np.ones(6))
        res = apply_amp_site((c_cfg, l_cfg), sp)
        signal = res.output.powers_mw - res.ase_mw
        assert np.allclose(signal[:3], 10 ** 1.2, rtol=1e-9)
        assert np.allclose(signal[3:], 10.0, rtol=1e-9)

    def test_uncovered_lit_channel_rejected(self):
        grid = build_grid(BandPlan(bands=(BandSpec("L", 186.5, 186.6, 2), BandSpec("C", 191.5, 191.6, 2)),
                                   spacing_ghz=100.0, symbol_bandwidth_ghz=50.0))
        c_cfg = EdfaConfig(amp_id="c", band="C", target_gain_db=10.0, band_range_thz=grid.band_range_thz("C"))
        with pytest.raises(AmplifierError):
            apply_amp_site((c_cfg,), PowerSpectrum(grid, np.ones(4)))


class TestAseAccumulate:
    def test_single_stage_unity(self):
        ase = [np.array([1e-4, 2e-4])]
        transfer = [np.ones(2)]
        assert np.allclose(ase_accumulate(ase, transfer), ase[0])

    def test_two_identical_stages(self):
        a = np.array([1e-4, 2e-4])
        out = ase_accumulate([a, a], [np.ones(2), np.ones(2)])
        assert np.allclose(out, 2 * a)

    def test_length_mismatch(self):
        with pytest.raises(ValueError):
            ase_accumulate([np.ones(2)], [np.ones(2), np.ones(2)])

    def test_long_chain_matches_noise_bin_propagation(self):
        """22-stage chain: ledger accumulation equals explicit stage-by-stage
        propagation of a noise bin."""
        rng = np.random.default_rng(11)
        n_stages, nch = 22, 16
        ases = [rng.uniform(1e-5, 5e-4, nch) for _ in range(n_stages)]
        transfers = [rng.uniform(0.5, 1.8, nch) for _ in range(n_stages)]

        # brute force: carry a bin through the chain
        bin_mw = np.zeros(nch)
        for ase, tr in zip(ases, transfers):
            bin_mw = bin_mw + ase  # noise added at stage output
            bin_mw = bin_mw * tr   # then sees the downstream transfer

        downstream = []
        for k in range(n_stages):
            prod = np.ones(nch)
            for tr in transfers[k:]:
                prod = prod * tr
            downstream.append(prod)
        ledger = ase_accumulate(ases, downstream)
        assert np.allclose(ledger, bin_mw, rtol=1e-9)


class TestSerialization:
    def test_round_trip(self):
        cfg = EdfaConfig(
            amp_id="S1:a3:C", site="S1:site3", band="C", target_gain_db=18.0,
            tilt_db=-0.6, ripple_db=(0.1, -0.1), ripple_nodes_thz=(191.35, 196.0),
            noise_figure_db=((191.35, 5.0), (196.0, 5.5)),
            band_range_thz=(191.35, 196.0), max_total_output_dbm=23.0, voa_out_db=0.5,
        )
        assert edfa_from_document(edfa_to_document(cfg)) == cfg
