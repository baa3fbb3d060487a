"""Front-end checks: filterbank identities, pitch round-trips, energy."""

import numpy as np
import pytest

from prosospot import dsp


def _sine(freq, seconds=2.0, amp=0.5):
    t = np.arange(int(seconds * dsp.SAMPLE_RATE)) / dsp.SAMPLE_RATE
    return dsp.Waveform(amp * np.sin(2.0 * np.pi * freq * t))


class TestFbank:
    def test_frame_count(self):
        fb = dsp.compute_fbank(dsp.Waveform(np.zeros(32000)))
        assert fb.num_frames == 1 + (32000 - 400) // 160 == 198

    def test_silence_hits_log_floor_everywhere(self):
        fb = dsp.compute_fbank(dsp.Waveform(np.zeros(8000)))
        np.testing.assert_allclose(fb.values, np.log(1e-10), rtol=1e-6)

    def test_tone_lands_in_nearest_mel_filter(self):
        # Analytic filter centers: 82 points equally spaced on the mel scale
        # between 20 Hz and 7600 Hz; centers are the interior 80.
        def mel(f):
            return 2595.0 * np.log10(1.0 + f / 700.0)

        grid = np.linspace(mel(20.0), mel(7600.0), 82)
        centers = 700.0 * (10.0 ** (grid[1:-1] / 2595.0) - 1.0)
        want = int(np.argmin(np.abs(mel(centers) - mel(1000.0))))
        np.testing.assert_allclose(centers, dsp.MEL_CENTERS_HZ, rtol=1e-12)

        fb = dsp.compute_fbank(_sine(1000.0, amp=0.9))
        for row in fb.values[5:-5]:
            assert int(np.argmax(row)) == want

    def test_scaling_shifts_log_output_by_two_log_c(self):
        base = _sine(440.0, amp=0.05)
        scaled = dsp.Waveform(base.samples * 4.0)
        lo = dsp.compute_fbank(base).values.astype(np.float64)
        hi = dsp.compute_fbank(scaled).values.astype(np.float64)
        mask = lo > np.log(1e-10) + 1.0  # ignore floored bins
        np.testing.assert_allclose((hi - lo)[mask], 2.0 * np.log(4.0),
                                   atol=2e-5)

    def test_wrong_rate_rejected(self):
        with pytest.raises(ValueError, match="sample rate"):
            dsp.compute_fbank(dsp.Waveform(np.zeros(8000), sample_rate=8000))

    def test_too_short_rejected(self):
        with pytest.raises(ValueError, match="shorter"):
            dsp.compute_fbank(dsp.Waveform(np.zeros(399)))


class TestPitch:
    def test_pure_200hz_recovered_within_2hz(self):
        f0, periodicity = dsp.estimate_f0(_sine(200.0))
        inner = f0[3:-3]
        assert np.mean(np.abs(inner - 200.0) <= 2.0) >= 0.95
        assert np.all(1.0 - periodicity[3:-3] <= 0.1)

    def test_sweep_of_tones_recovered(self):
        for freq in (80.0, 120.0, 150.0, 237.3, 300.0):
            f0, _ = dsp.estimate_f0(_sine(freq, seconds=1.0))
            err = np.abs(f0[3:-3] - freq)
            assert np.median(err) <= 0.03 * freq, freq

    def test_white_noise_is_unvoiced_and_aperiodic(self):
        rng = np.random.default_rng(42)
        wav = dsp.Waveform(0.3 * rng.standard_normal(16000))
        f0, periodicity = dsp.estimate_f0(wav)
        ap = 1.0 - periodicity
        assert np.mean(f0 == 0.0) >= 0.9
        assert np.mean(ap >= 0.9) >= 0.9

    def test_scale_invariance(self):
        wav = _sine(173.0, amp=0.02)
        big = dsp.Waveform(wav.samples * 30.0)
        f0a, pa = dsp.estimate_f0(wav)
        f0b, pb = dsp.estimate_f0(big)
        np.testing.assert_allclose(f0a, f0b, atol=1e-9)
        np.testing.assert_allclose(pa, pb, atol=1e-9)


class TestProsodyTrack:
    def test_silence_row_convention(self):
        track = dsp.compute_prosody(dsp.Waveform(np.zeros(8000)))
        np.testing.assert_array_equal(
            np.unique(track.values, axis=0), [[0.0, 1.0, 0.0]])

    def test_energy_ramp_is_nondecreasing(self):
        t = np.arange(32000) / dsp.SAMPLE_RATE
        ramp = np.linspace(0.0, 1.0, 32000) * np.sin(2 * np.pi * 220.0 * t)
        track = dsp.compute_prosody(dsp.Waveform(ramp))
        energy = track.values[:, 2].astype(np.float64)
        assert np.all(np.diff(energy) >= -1e-3)
        assert energy.max() == pytest.approx(1.0)

    def test_energy_max_normalized(self):
        track = dsp.compute_prosody(_sine(220.0, amp=0.7))
        assert track.values[:, 2].max() == pytest.approx(1.0)


class TestNormalization:
    def _tracks(self):
        rng = np.random.default_rng(5)
        tracks = []
        for freq in (150.0, 190.0, 230.0):
            wav = _sine(freq, seconds=1.0, amp=0.4)
            noisy = dsp.Waveform(
                wav.samples + 0.01 * rng.standard_normal(len(wav.samples)))
            tracks.append(dsp.compute_prosody(noisy))
        return tracks

    def test_round_trip_standardizes(self):
        tracks = self._tracks()
        stats = dsp.compute_prosody_stats(tracks)
        outs = [dsp.normalize_prosody(tr, stats) for tr in tracks]
        voiced = np.concatenate([o[tr.values[:, 0] > 0, 0]
                                 for o, tr in zip(outs, tracks)])
        assert abs(voiced.mean()) < 1e-3
        assert voiced.std() == pytest.approx(1.0, abs=1e-3)

    def test_unvoiced_frames_stay_zero(self):
        tracks = self._tracks()
        stats = dsp.compute_prosody_stats(tracks)
        sil = dsp.compute_prosody(dsp.Waveform(np.zeros(8000)))
        out = dsp.normalize_prosody(sil, stats)
        np.testing.assert_array_equal(out[:, 0], 0.0)
        assert np.all(np.isfinite(out))

    def test_constant_channel_gets_unit_std_and_flag(self):
        sil = dsp.compute_prosody(dsp.Waveform(np.zeros(8000)))
        stats = dsp.compute_prosody_stats([sil])
        assert "f0" in stats.degenerate and "aperiodicity" in stats.degenerate
        assert np.all(stats.std > 0)
        out = dsp.normalize_prosody(sil, stats)
        assert np.all(np.isfinite(out))

    def test_stats_survive_container_round_trip(self, tmp_path):
        from prosospot import tensorcore as tc
        stats = dsp.compute_prosody_stats(self._tracks())
        path = tmp_path / "stats.bin"
        tc.save_tensors(path, stats.to_arrays())
        back = dsp.ProsodyStats.from_arrays(tc.load_tensors(path))
        np.testing.assert_allclose(back.mean, stats.mean, rtol=1e-6)
        np.testing.assert_allclose(back.std, stats.std, rtol=1e-6)


class TestWavIO:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(9)
        wav = dsp.Waveform(np.clip(rng.standard_normal(4000) * 0.2, -1, 1))
        path = tmp_path / "x.wav"
        dsp.write_wav(path, wav)
        back = dsp.read_wav(path)
        assert back.sample_rate == dsp.SAMPLE_RATE
        np.testing.assert_allclose(back.samples, wav.samples, atol=1.0 / 32000)

    def test_write_is_bitwise_deterministic(self, tmp_path):
        wav = _sine(172.0, seconds=0.5)
        p1, p2 = tmp_path / "a.wav", tmp_path / "b.wav"
        dsp.write_wav(p1, wav)
        dsp.write_wav(p2, wav)
        assert p1.read_bytes() == p2.read_bytes()
