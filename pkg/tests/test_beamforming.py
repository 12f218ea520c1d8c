import json

import numpy as np
import pytest

from sirup.beamforming import (Projector, apply_beamformer, beam_metrics, beampattern,
                               beamform_signal, bss_eval, make_beamformer, scores_from_parts)
from sirup.geometry import AmbisonicSpec, Direction, SteeringVectorSet, ambisonic_algebraic_sv
from sirup.localization import DoaGrid
from sirup.room import RoomConfig, SourceSpec, speech_shaped_noise, synth_scene
from sirup.signal import Spectrogram

FS = 16000
RING = DoaGrid.azimuth_ring(28.0, 1.0)


def _alg(az, order=3):
    return ambisonic_algebraic_sv(Direction.from_degrees(az, 28), AmbisonicSpec(order))


# ---------------------------------------------------------------- beamformer

def test_weights_unit_norm_and_zero_row_rejected():
    rng = np.random.default_rng(0)
    v = rng.normal(size=(257, 4)) + 1j * rng.normal(size=(257, 4))
    bf = make_beamformer(SteeringVectorSet(v, "ambisonic", AmbisonicSpec(1), "measured"))
    np.testing.assert_allclose(np.linalg.norm(bf.weights, axis=1), 1.0, atol=1e-6)
    assert bf.source_kind == "measured"
    v[17] = 0
    with pytest.raises(ValueError, match="17"):
        make_beamformer(SteeringVectorSet(v, "ambisonic", AmbisonicSpec(1), "measured"))


def test_single_channel_is_passthrough():
    x = speech_shaped_noise(0.5, FS, 0)
    bf = make_beamformer(_alg(0.0, order=0))
    np.testing.assert_allclose(bf.weights, 1.0)
    y = beamform_signal(bf, x)
    np.testing.assert_allclose(y.samples, x.samples, atol=1e-10)


def test_output_invariant_to_complex_scaling_of_sv():
    rng = np.random.default_rng(1)
    v = rng.normal(size=(9, 4)) + 1j * rng.normal(size=(9, 4))
    x = rng.normal(size=(9, 5, 4)) + 1j * rng.normal(size=(9, 5, 4))
    spec = Spectrogram(x, 16, 8, "hamming", FS)
    a = apply_beamformer(make_beamformer(SteeringVectorSet(v, "ambisonic", AmbisonicSpec(1))), spec)
    b = apply_beamformer(make_beamformer(SteeringVectorSet(v * (2 - 3j), "ambisonic", AmbisonicSpec(1))),
                         spec)
    phase = b.bins / a.bins
    np.testing.assert_allclose(np.abs(phase), 1.0)
    np.testing.assert_allclose(phase, phase.flat[0])


def test_orthogonal_interferer_is_nulled():
    rng = np.random.default_rng(2)
    q, _ = np.linalg.qr(rng.normal(size=(16, 2)) + 1j * rng.normal(size=(16, 2)))
    a1, a2 = q[:, 0], q[:, 1]
    s2 = rng.normal(size=(257, 40)) + 1j * rng.normal(size=(257, 40))
    x = a2[None, None, :] * s2[:, :, None]
    spec = Spectrogram(x, 512, 256, "hamming", FS)
    bf = make_beamformer(SteeringVectorSet(np.tile(a1, (257, 1)), "ambisonic", AmbisonicSpec(3)))
    residual = np.sum(np.abs(apply_beamformer(bf, spec).bins) ** 2) / np.sum(np.abs(s2) ** 2)
    assert 10 * np.log10(residual + 1e-300) <= -40


def test_matched_filter_gain_in_white_noise():
    room = RoomConfig(max_ism_order=0)
    src = SourceSpec(Direction.from_degrees(30, 28), 1.5, speech_shaped_noise(2.0, FS, 3))
    sc = synth_scene(room, [src], 0.0, AmbisonicSpec(3), seed=4)
    bf = make_beamformer(sc.true_transfer[0])
    sig = beamform_signal(bf, sc.per_source_images[0]).samples[0]
    noise = beamform_signal(bf, sc.noise).samples[0]
    snr_in = 10 * np.log10(np.mean(sc.per_source_images[0].samples[0] ** 2)
                           / np.mean(sc.noise.samples[0] ** 2))
    snr_out = 10 * np.log10(np.mean(sig ** 2) / np.mean(noise ** 2))
    assert snr_out >= snr_in + 10 * np.log10(16) - 1


def test_true_sv_beam_raises_sir_over_w_channel():
    room = RoomConfig(max_ism_order=0)
    srcs = [SourceSpec(Direction.from_degrees(20, 28), 1.5, speech_shaped_noise(1.0, FS, 5)),
            SourceSpec(Direction.from_degrees(110, 28), 1.5, speech_shaped_noise(1.0, FS, 6))]
    sc = synth_scene(room, srcs, np.inf, AmbisonicSpec(3), seed=0)
    refs = [im.channels(slice(0, 1)) for im in sc.per_source_images]
    w_sir = bss_eval([sc.mixture.channels(slice(0, 1))], refs).sir_db[0]
    out = beamform_signal(make_beamformer(sc.true_transfer[0]), sc.mixture)
    bf_sir = bss_eval([out], refs).sir_db[0]
    assert bf_sir >= w_sir + 10


# ---------------------------------------------------------------- beampattern

def test_order0_pattern_constant():
    p = beampattern(make_beamformer(_alg(0.0, order=0)), RING)
    np.testing.assert_allclose(p, p[0])


def test_matched_pattern_peaks_at_steering_direction():
    p = beampattern(make_beamformer(_alg(211.0)), RING)
    assert int(np.argmax(p)) == 211
    assert p[211] == pytest.approx(1.0)


def test_order3_peak_to_mean_exceeds_order1():
    r1 = [beampattern(make_beamformer(_alg(45.0, order=n)), RING) for n in (1, 3)]
    ratio = [p.max() / p.mean() for p in r1]
    assert ratio[1] > ratio[0]


def test_di_monotone_in_order():
    di = [beam_metrics(beampattern(make_beamformer(_alg(45.0, order=n)), RING)).di_db
          for n in range(4)]
    assert di[0] == pytest.approx(0.0, abs=1e-9)
    assert all(a < b for a, b in zip(di, di[1:]))


def test_beampattern_channel_mismatch():
    with pytest.raises(ValueError):
        beampattern(make_beamformer(_alg(0.0, order=1)), RING, algebraic_source=AmbisonicSpec(2))


# ---------------------------------------------------------------- beam metrics

def test_constant_pattern_metrics():
    m = beam_metrics(np.ones(360))
    assert (m.di_db, m.bw3_deg, m.sl_db, m.sl_defined) == (0.0, 360.0, 0.0, False)


def test_cardioid_matches_ring_integrals():
    az = np.deg2rad(np.arange(360.0))
    peak = 100
    p = np.cos((az - az[peak]) / 2) ** 2
    m = beam_metrics(p, peak)
    # mean of cos^2(x/2) over the ring is 1/2; half power at |x| = 90 deg
    assert m.di_db == pytest.approx(10 * np.log10(2), abs=0.1)
    assert m.bw3_deg == pytest.approx(180.0, abs=0.5)
    assert not m.sl_defined


def test_sidelobe_of_two_lobe_pattern():
    az = np.deg2rad(np.arange(360.0))
    p = np.exp(-((az - np.pi / 2) / 0.2) ** 2) + 0.1 * np.exp(-((az - 3 * np.pi / 2) / 0.2) ** 2)
    m = beam_metrics(p)
    assert m.sl_defined
    assert m.sl_db == pytest.approx(-10.0, abs=0.05)
    # Gaussian half-power width 2 * 0.2 * sqrt(ln 2) rad
    assert m.bw3_deg == pytest.approx(np.rad2deg(0.4 * np.sqrt(np.log(2))), abs=0.5)


def test_order3_pattern_has_suppressed_sidelobes():
    m = beam_metrics(beampattern(make_beamformer(_alg(0.0)), RING))
    assert 0 < m.bw3_deg < 360 and m.sl_db < 0 and m.sl_defined
    assert json.loads(m.to_json())["bw3_deg"] == m.bw3_deg


# ---------------------------------------------------------------- bss_eval

def _white(n, seed):
    return np.random.default_rng(seed).standard_normal(n)


def test_perfect_estimate_is_capped():
    s = _white(8000, 0)
    sc = bss_eval([s], [s], filter_len=64)
    assert sc.sdr_db[0] == sc.sir_db[0] == sc.sar_db[0] == 100.0


def test_equal_power_orthogonal_noise_gives_zero_sdr():
    s = _white(32000, 1)
    e = _white(32000, 2)
    e -= s * (e @ s) / (s @ s)
    e *= np.linalg.norm(s) / np.linalg.norm(e)
    sc = bss_eval([s + e], [s, _white(32000, 3)])
    assert sc.sdr_db[0] == pytest.approx(0.0, abs=0.2)


def test_scale_invariance():
    refs = [_white(6000, 4), _white(6000, 5)]
    est = refs[0] + 0.3 * refs[1] + 0.1 * _white(6000, 6)
    a = bss_eval([est], refs, filter_len=32)
    b = bss_eval([0.5 * est], refs, filter_len=32)
    np.testing.assert_allclose(a.sdr_db, b.sdr_db, atol=1e-9)
    np.testing.assert_allclose(a.sir_db, b.sir_db, atol=1e-9)


def test_energy_decomposition_is_orthogonal():
    refs = np.stack([_white(4000, 7), _white(4000, 8)])
    est = np.convolve(refs[0], [1, 0.5, -0.2])[:4000] + 0.4 * refs[1] + 0.2 * _white(4000, 9)
    t, i, a = Projector(refs, 16).decompose(est, 0)
    total = np.sum(est ** 2)
    assert abs(np.sum(t ** 2) + np.sum(i ** 2) + np.sum(a ** 2) - total) < 1e-6 * total


def test_projection_matches_least_squares_oracle():
    rng = np.random.default_rng(10)
    n, el = 300, 6
    refs = rng.standard_normal((2, n))
    est = rng.standard_normal(n)
    t, i, a = Projector(refs, el).decompose(est, 0)
    m = n + el - 1

    def delays(x):
        return np.stack([np.concatenate([np.zeros(k), x, np.zeros(el - 1 - k)]) for k in range(el)], 1)

    padded = np.concatenate([est, np.zeros(el - 1)])
    d0 = delays(refs[0])
    dall = np.hstack([d0, delays(refs[1])])
    t_ref = d0 @ np.linalg.lstsq(d0, padded, rcond=None)[0]
    p_ref = dall @ np.linalg.lstsq(dall, padded, rcond=None)[0]
    assert t.shape == (m,)
    np.testing.assert_allclose(t, t_ref, atol=1e-8)
    np.testing.assert_allclose(i, p_ref - t_ref, atol=1e-8)
    np.testing.assert_allclose(a, padded - p_ref, atol=1e-8)


def test_sdr_bounded_by_sir_and_sar():
    rng = np.random.default_rng(11)
    refs = rng.standard_normal((2, 5000))
    for k in range(5):
        est = refs[0] + rng.uniform(0, 1) * refs[1] + rng.uniform(0, 1) * rng.standard_normal(5000)
        sc = bss_eval([est], refs, filter_len=32)
        assert sc.sdr_db[0] <= min(sc.sir_db[0], sc.sar_db[0]) + 3.02


def test_bss_eval_errors():
    with pytest.raises(ValueError):
        bss_eval([np.ones(10)], [np.zeros(10)], filter_len=4)
    with pytest.raises(ValueError):
        bss_eval([np.ones(10)], [np.ones(12)], filter_len=4)


def test_scores_from_parts_definitions():
    t = np.array([2.0, 0, 0])
    i = np.array([0, 1.0, 0])
    a = np.array([0, 0, 1.0])
    sdr, sir, sar = scores_from_parts(t, i, a)
    assert sdr == pytest.approx(10 * np.log10(4 / 2))
    assert sir == pytest.approx(10 * np.log10(4))
    assert sar == pytest.approx(10 * np.log10(5))
