import numpy as np
import pytest

from sirup.estimation import (SpatialCovariance, estimate_sv, make_condition, power_iteration,
                              principal_eigvec, scm)
from sirup.geometry import AmbisonicSpec, Direction, ambisonic_algebraic_sv, sph_harmonics
from sirup.room import RoomConfig, SourceSpec, speech_shaped_noise, synth_scene
from sirup.signal import SignalBuffer, Spectrogram, stft

FS = 16000


def _cos(a, b):
    """Phase-invariant cosine similarity per row."""
    num = np.abs(np.sum(np.conj(a) * b, axis=-1))
    return num / (np.linalg.norm(a, axis=-1) * np.linalg.norm(b, axis=-1))


def _random_psd(rng, n, m, rank=None):
    rank = rank or m
    a = rng.normal(size=(n, m, rank)) + 1j * rng.normal(size=(n, m, rank))
    return a @ np.conj(np.swapaxes(a, 1, 2))


def _spectrogram(bins):
    return Spectrogram(bins, 512, 256, "hamming", FS)


# ---------------------------------------------------------------- spatial covariance

def test_scm_single_frame_is_rank_one():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(5, 1, 4)) + 1j * rng.normal(size=(5, 1, 4))
    cov = scm(_spectrogram(x)).matrices
    np.testing.assert_allclose(cov, np.einsum("fm,fn->fmn", x[:, 0], np.conj(x[:, 0])))
    assert np.all(np.linalg.matrix_rank(cov, tol=1e-10) == 1)


def test_scm_rank_one_source_structure():
    rng = np.random.default_rng(1)
    a = rng.normal(size=(7, 4)) + 1j * rng.normal(size=(7, 4))
    s = rng.normal(size=(7, 30)) + 1j * rng.normal(size=(7, 30))
    x = a[:, None, :] * s[:, :, None]
    cov = scm(_spectrogram(x)).matrices
    power = np.mean(np.abs(s) ** 2, axis=1)
    np.testing.assert_allclose(cov, np.einsum("fm,fn->fmn", a, np.conj(a)) * power[:, None, None],
                               rtol=1e-12, atol=1e-12)


def test_scm_hermitian_psd():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(20, 3, 9)) + 1j * rng.normal(size=(20, 3, 9))
    cov = scm(_spectrogram(x)).matrices
    herm = np.linalg.norm(cov - np.conj(np.swapaxes(cov, 1, 2)), axis=(1, 2))
    assert np.all(herm < 1e-6 * np.linalg.norm(cov, axis=(1, 2)))
    evals = np.linalg.eigvalsh(cov)
    trace = np.real(np.trace(cov, axis1=1, axis2=2))
    assert np.all(evals.min(axis=1) >= -1e-8 * trace)


def test_scm_frame_range_errors():
    spec = _spectrogram(np.ones((3, 4, 2), dtype=complex))
    with pytest.raises(ValueError):
        scm(spec, range(0))
    with pytest.raises(ValueError):
        scm(spec, range(2, 6))
    assert scm(spec, range(1, 3)).frame_count == 2


# ---------------------------------------------------------------- principal eigenvector

def test_rank_one_returns_normalized_vector():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(10, 16)) + 1j * rng.normal(size=(10, 16))
    cov = SpatialCovariance(np.einsum("fm,fn->fmn", a, np.conj(a)), 1)
    v = principal_eigvec(cov).vectors
    np.testing.assert_allclose(_cos(v, a), 1.0, atol=1e-9)
    np.testing.assert_allclose(np.linalg.norm(v, axis=1), 1.0)
    np.testing.assert_allclose(v[:, 0].imag, 0.0, atol=1e-12)
    assert np.all(v[:, 0].real >= 0)


def test_identity_is_degenerate_and_zero_returns_e0():
    mats = np.stack([np.eye(4, dtype=complex), np.zeros((4, 4), dtype=complex)])
    sv = principal_eigvec(SpatialCovariance(mats, 1))
    assert sv.degenerate.tolist() == [True, True]
    np.testing.assert_array_equal(sv.vectors[1], [1, 0, 0, 0])


def test_matches_dense_eigendecomposition_on_1000_matrices():
    rng = np.random.default_rng(4)
    mats = _random_psd(rng, 1000, 4)
    v = principal_eigvec(SpatialCovariance(mats, 1)).vectors
    evals, vecs = np.linalg.eigh(mats)
    ref = vecs[:, :, -1]
    gap = evals[:, -1] - evals[:, -2]
    ok = gap > 1e-3 * evals.sum(axis=1)
    # sine of the angle via the orthogonal residual; arccos loses precision near 1
    inner = np.sum(np.conj(ref) * v, axis=1)
    resid = np.linalg.norm(v - inner[:, None] * ref, axis=1)
    angle = np.arctan2(resid, np.abs(inner))
    assert ok.sum() > 900
    assert np.max(angle[ok]) < 1e-8


def test_small_eigengap_still_dominant():
    # nearly equal top eigenvalues make power iteration slow; the result must still be correct
    rng = np.random.default_rng(5)
    q, _ = np.linalg.qr(rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    lam = np.array([1.0, 0.999999, 0.3, 0.1])
    mat = (q * lam) @ np.conj(q.T)
    v = principal_eigvec(SpatialCovariance(mat[None], 1)).vectors[0]
    assert _cos(v, q[:, 0]) > 1 - 1e-8


def test_power_iteration_converges_on_well_separated():
    rng = np.random.default_rng(6)
    mats = _random_psd(rng, 50, 4, rank=1) + 1e-3 * np.eye(4)
    _, done = power_iteration(mats)
    assert done.all()


# ---------------------------------------------------------------- estimate_sv on scenes

def _single_scene(snr, rt60, ism, az=40.0, seed=0):
    room = RoomConfig(rt60=rt60, max_ism_order=ism)
    src = SourceSpec(Direction.from_degrees(az, 28), 1.5, speech_shaped_noise(2.0, FS, seed))
    return synth_scene(room, [src], snr, AmbisonicSpec(3), seed=seed + 10)


def test_anechoic_estimate_matches_true_transfer():
    sc = _single_scene(np.inf, 0.2, 0)
    sv = estimate_sv(sc.mixture)
    cos = _cos(sv.vectors[1:], sc.true_transfer[0].vectors[1:])
    assert np.min(cos) >= 0.999


def test_reverberant_noisy_estimate_mean_cosine():
    sc = _single_scene(20.0, 0.2, 20)
    sv = estimate_sv(sc.mixture)
    cos = _cos(sv.vectors[1:129], sc.true_transfer[0].vectors[1:129])
    assert np.mean(cos) >= 0.9


def test_time_separated_sources_are_told_apart():
    room = RoomConfig(rt60=0.2, max_ism_order=10)
    srcs = [SourceSpec(Direction.from_degrees(20, 28), 1.5, speech_shaped_noise(2.0, FS, 1), 0.0),
            SourceSpec(Direction.from_degrees(160, 28), 1.5, speech_shaped_noise(2.0, FS, 2), 2.0)]
    sc = synth_scene(room, srcs, 20.0, AmbisonicSpec(3), seed=3)
    first = estimate_sv(sc.mixture, (0.0, 2.0)).vectors[1:129]
    second = estimate_sv(sc.mixture, (2.0, 4.0)).vectors[1:129]
    t0, t1 = (t.vectors[1:129] for t in sc.true_transfer)
    assert np.mean(_cos(first, t0)) > np.mean(_cos(first, t1))
    assert np.mean(_cos(second, t1)) > np.mean(_cos(second, t0))


def test_global_phase_and_scale_invariance():
    sc = _single_scene(15.0, 0.3, 3)
    spec = stft(sc.mixture)
    ref = principal_eigvec(scm(spec)).vectors
    rotated = Spectrogram(spec.bins * np.exp(1j * 1.3), spec.frame_size, spec.hop, spec.window,
                          spec.sample_rate)
    np.testing.assert_allclose(principal_eigvec(scm(rotated)).vectors, ref, atol=1e-8)
    scaled = SignalBuffer(sc.mixture.samples * 7.5, FS)
    np.testing.assert_allclose(estimate_sv(scaled).vectors, estimate_sv(sc.mixture).vectors,
                               atol=1e-8)


def test_window_shorter_than_frame_rejected():
    sc = _single_scene(np.inf, 0.2, 0)
    with pytest.raises(ValueError):
        estimate_sv(sc.mixture, (0.0, 0.01))


# ---------------------------------------------------------------- conditioning tensor

def _foa():
    return ambisonic_algebraic_sv(Direction.from_degrees(75, 28), AmbisonicSpec(1))


def test_condition_zero_pads():
    c = make_condition(_foa(), 16)
    assert c.data.shape == (257, 16) and c.valid_channels == 4
    np.testing.assert_array_equal(c.data[:, :4], _foa().vectors)
    assert np.all(c.data[:, 4:] == 0)


def test_condition_same_width_is_identity():
    np.testing.assert_array_equal(make_condition(_foa(), 4).data, _foa().vectors)


def test_condition_algebraic_fill():
    d = Direction.from_degrees(75, 28)
    c = make_condition(_foa(), 16, algebraic_fill=d)
    np.testing.assert_allclose(c.data[:, 4:], np.tile(sph_harmonics(d, 3)[4:], (257, 1)))


def test_condition_too_narrow_rejected():
    with pytest.raises(ValueError):
        make_condition(ambisonic_algebraic_sv(Direction(0.0), AmbisonicSpec(3)), 4)
