import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sequifi.errors import FeatureError
from sequifi.features import (
    MfccConfig,
    average_pool,
    compute_mfcc,
    dct_matrix,
    extract_utterance,
    ingest_embeddings,
    ingest_frame_embeddings,
    mel_filter_edges,
    mel_filterbank,
    read_wav,
    resample_to_16k,
)

from conftest import write_wav

CFG = MfccConfig()


def tone(freq, seconds=1.0, rate=16000, amp=0.5):
    t = np.arange(int(seconds * rate)) / rate
    return amp * np.sin(2 * np.pi * freq * t)


class TestResample:
    def test_identity_at_16k(self):
        x = np.sin(np.arange(1000) * 0.1)
        out = resample_to_16k(x, 16000)
        assert np.array_equal(out, x)

    def test_440hz_tone_survives_44k1_resampling(self):
        x = tone(440.0, rate=44100)
        out = resample_to_16k(x, 44100)
        assert out.size == round(x.size * 16000 / 44100)
        spectrum = np.abs(np.fft.rfft(out))
        peak_hz = np.argmax(spectrum) * 16000 / out.size
        assert abs(peak_hz - 440.0) <= 1.0

    def test_output_length_rule(self):
        x = np.ones(100)
        assert resample_to_16k(x, 44100).size == round(100 * 16000 / 44100)
        assert resample_to_16k(x, 22050).size == round(100 * 16000 / 22050)

    def test_empty_signal_errors(self):
        with pytest.raises(ValueError):
            resample_to_16k(np.array([]), 44100)

    def test_low_rate_errors(self):
        with pytest.raises(ValueError):
            resample_to_16k(np.ones(10), 4000)

    def test_upsampling_preserves_tone(self):
        x = tone(440.0, rate=8000)
        out = resample_to_16k(x, 8000)
        spectrum = np.abs(np.fft.rfft(out))
        peak_hz = np.argmax(spectrum) * 16000 / out.size
        assert abs(peak_hz - 440.0) <= 1.0


class TestComputeMfcc:
    def test_silence_hits_log_floor(self):
        frames = compute_mfcc(np.zeros(16000), CFG)
        expected = dct_matrix(CFG.num_ceps, CFG.num_mel_filters) @ (
            np.log(CFG.log_floor) * np.ones(CFG.num_mel_filters)
        )
        assert np.all(np.isfinite(frames))
        np.testing.assert_allclose(frames, np.tile(expected, (frames.shape[0], 1)), atol=1e-9)

    def test_tone_maps_to_bracketing_mel_filter(self):
        frames_energy = compute_mfcc(tone(440.0), CFG)  # sanity: runs
        # re-derive filter energies directly for the argmax check
        cfg = CFG
        x = tone(440.0)
        emphasized = np.append(x[0], x[1:] - cfg.preemphasis * x[:-1])
        n = 1 + (x.size - cfg.frame_samples) // cfg.hop_samples
        starts = np.arange(n) * cfg.hop_samples
        mats = emphasized[starts[:, None] + np.arange(cfg.frame_samples)] * np.hamming(
            cfg.frame_samples
        )
        power = np.abs(np.fft.rfft(mats, n=cfg.fft_size, axis=1)) ** 2
        log_energy = np.log(np.maximum(power @ mel_filterbank(cfg).T, cfg.log_floor))
        best = int(np.argmax(log_energy.mean(axis=0)))
        edges = mel_filter_edges(cfg)
        left, right = edges[best], edges[best + 2]
        assert left < 440.0 < right
        assert frames_energy.shape == (n, cfg.num_ceps)

    def test_amplitude_doubling_shifts_only_c0(self):
        rng = np.random.default_rng(1)
        x = 0.1 * rng.normal(size=16000)  # broadband: no filter is floored
        a = compute_mfcc(x, CFG)
        b = compute_mfcc(2.0 * x, CFG)
        c0_shift = np.log(4.0) * np.sqrt(1.0 / CFG.num_mel_filters) * CFG.num_mel_filters
        np.testing.assert_allclose(b[:, 0] - a[:, 0], c0_shift, atol=1e-9)
        np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-6)

    def test_short_signal_errors(self):
        with pytest.raises(ValueError):
            compute_mfcc(np.zeros(CFG.frame_samples - 1), CFG)

    def test_trailing_samples_do_not_change_frames(self):
        rng = np.random.default_rng(2)
        base_len = CFG.frame_samples + 3 * CFG.hop_samples
        x = rng.normal(size=base_len + CFG.hop_samples - 1)
        a = compute_mfcc(x[:base_len], CFG)
        b = compute_mfcc(x, CFG)
        assert a.shape == b.shape
        np.testing.assert_array_equal(a, b)

    def test_frame_count_formula(self):
        for extra in (0, 1, CFG.hop_samples - 1, CFG.hop_samples):
            n = CFG.frame_samples + 5 * CFG.hop_samples + extra
            frames = compute_mfcc(np.ones(n), CFG)
            assert frames.shape[0] == 1 + (n - CFG.frame_samples) // CFG.hop_samples


class TestDctAndFilterbank:
    def test_dct_orthonormal(self):
        m = dct_matrix(CFG.num_mel_filters, CFG.num_mel_filters)
        np.testing.assert_allclose(m @ m.T, np.eye(CFG.num_mel_filters), atol=1e-6)

    def test_filters_nonnegative_and_triangular_cover(self):
        fb = mel_filterbank(CFG)
        assert fb.shape == (CFG.num_mel_filters, CFG.fft_size // 2 + 1)
        assert np.all(fb >= 0.0)
        bin_freqs = np.arange(CFG.fft_size // 2 + 1) * CFG.sample_rate / CFG.fft_size
        interior = (bin_freqs > CFG.fmin) & (bin_freqs < CFG.fmax)
        assert np.all(fb[:, interior].max(axis=0) > 0.0)

    def test_config_invariants(self):
        with pytest.raises(ValueError):
            MfccConfig(fft_size=256)  # smaller than the 400-sample frame
        with pytest.raises(ValueError):
            MfccConfig(num_ceps=27)
        with pytest.raises(ValueError):
            MfccConfig(fmax=9000.0)


class TestAveragePool:
    def test_constant_frames(self):
        f = np.array([1.0, -2.0, 3.0])
        np.testing.assert_array_equal(average_pool(np.tile(f, (5, 1))), f)

    def test_small_example(self):
        np.testing.assert_array_equal(
            average_pool(np.array([[0.0, 2.0], [2.0, 0.0]])), np.array([1.0, 1.0])
        )

    def test_empty_errors(self):
        with pytest.raises(ValueError):
            average_pool(np.zeros((0, 4)))

    @given(
        rows=st.integers(1, 6),
        cols=st.integers(1, 5),
        alpha=st.floats(-3, 3),
        beta=st.floats(-3, 3),
        seed=st.integers(0, 100),
    )
    @settings(max_examples=40, deadline=None)
    def test_linearity(self, rows, cols, alpha, beta, seed):
        rng = np.random.default_rng(seed)
        a = rng.normal(size=(rows, cols))
        b = rng.normal(size=(rows, cols))
        np.testing.assert_allclose(
            average_pool(alpha * a + beta * b),
            alpha * average_pool(a) + beta * average_pool(b),
            atol=1e-9,
        )


class TestIngest:
    def write_csv(self, path, dim, rows):
        header = ",".join(["id"] + [f"f{i}" for i in range(dim)])
        path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")

    def test_loads_matching_dim(self, tmp_path):
        path = tmp_path / "f.csv"
        self.write_csv(path, 192, ["u0," + ",".join(["0.5"] * 192)])
        out = ingest_embeddings(path, 192)
        assert out["u0"].values.shape == (192,)
        assert out["u0"].provenance == "precomputed"

    def test_wrong_width_names_row(self, tmp_path):
        path = tmp_path / "f.csv"
        self.write_csv(path, 512, ["u0," + ",".join(["0.5"] * 768)])
        with pytest.raises(FeatureError, match="u0"):
            ingest_embeddings(path, 512)

    def test_nan_cell_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        self.write_csv(path, 3, ["u0,0.1,nan,0.3"])
        with pytest.raises(FeatureError, match="(?i)non-finite"):
            ingest_embeddings(path, 3)

    def test_non_numeric_cell_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        self.write_csv(path, 2, ["u0,0.1,abc"])
        with pytest.raises(FeatureError, match="abc"):
            ingest_embeddings(path, 2)

    def test_duplicate_id_rejected(self, tmp_path):
        path = tmp_path / "f.csv"
        self.write_csv(path, 2, ["u0,0.1,0.2", "u0,0.3,0.4"])
        with pytest.raises(FeatureError, match="duplicate"):
            ingest_embeddings(path, 2)

    def test_frame_sequences_group_by_id(self, tmp_path):
        path = tmp_path / "seq.csv"
        header = "id,frame,f0,f1"
        rows = ["u0,0,0.1,0.2", "u0,1,0.3,0.4", "u1,0,0.5,0.6"]
        path.write_text("\n".join([header] + rows) + "\n", encoding="utf-8")
        out = ingest_frame_embeddings(path, 2)
        assert out["u0"].shape == (2, 2)
        assert out["u1"].shape == (1, 2)


class TestWav:
    def test_mono_round_trip(self, tmp_path):
        x = tone(220.0, seconds=0.1)
        path = write_wav(tmp_path / "a.wav", x)
        signal, rate = read_wav(path)
        assert rate == 16000
        np.testing.assert_allclose(signal, x, atol=1e-3)

    def test_stereo_averaged(self, tmp_path):
        x = tone(220.0, seconds=0.05)
        path = write_wav(tmp_path / "s.wav", x, channels=2)
        signal, _ = read_wav(path)
        np.testing.assert_allclose(signal, x, atol=1e-3)

    def test_garbage_file_errors(self, tmp_path):
        path = tmp_path / "bad.wav"
        path.write_bytes(b"not a wav at all")
        with pytest.raises(FeatureError):
            read_wav(path)

    def test_extract_utterance_pooled_and_sequence(self, tmp_path):
        x = tone(440.0, seconds=0.5, rate=22050)
        pooled = extract_utterance(x, 22050, CFG)
        assert pooled.shape == (13,)
        seq = extract_utterance(x, 22050, MfccConfig(sequence_mode=True))
        assert seq.ndim == 2 and seq.shape[1] == 13
