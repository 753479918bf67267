import hashlib
import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image

from oracles import naive_dft
from painsig.errors import SignalTooShort
from painsig.render import ImageKind, fft, ifft, render, spectrogram_matrix, spectrum, stft
from painsig.render._viridis import VIRIDIS
from painsig.render.image import SIZE, waveform_rows

FS = 512.0
SINE = np.sin(2 * np.pi * 64 * np.arange(2048) / FS)  # fs/8, bin 8 of a 64-point frame
CONSTANT = np.full(512, 0.7)

# sha256 of the raw RGB pixels, computed once and frozen
GOLDEN = {
    "constant-waveform": "fe200909ea22962e6ddcce7876204b99b685f3705f26bc37331b73576f9ce94c",
    "sine-psd": "67b730118c69b932a197d78057dc62aede1a90d2053d77f5af7accd04d7cdb08",
}


def _sha(img):
    return hashlib.sha256(img.pixels.tobytes()).hexdigest()


def _lut_index(pixels):
    lookup = {tuple(c): i for i, c in enumerate(VIRIDIS.tolist())}
    return np.array([[lookup[tuple(p)] for p in row] for row in pixels.tolist()])


class TestFft:
    def test_impulse(self):
        np.testing.assert_allclose(fft([1, 0, 0, 0]), [1, 1, 1, 1], atol=1e-15)

    def test_dc(self):
        np.testing.assert_allclose(fft([1, 1, 1, 1]), [4, 0, 0, 0], atol=1e-15)

    @pytest.mark.parametrize("n", [4, 8, 16, 32, 64, 128, 256, 512, 1024])
    def test_matches_naive_dft(self, n):
        x = np.random.default_rng(n).normal(size=n) + 1j * np.random.default_rng(n + 1).normal(size=n)
        ref = naive_dft(x)
        assert np.max(np.abs(fft(x) - ref)) < 1e-9 * max(1.0, np.max(np.abs(ref)))

    def test_parseval(self):
        x = np.random.default_rng(0).normal(size=64)
        X = fft(x)
        assert np.sum(np.abs(X) ** 2) / 64 == pytest.approx(np.sum(x ** 2), rel=1e-9)

    @pytest.mark.parametrize("n", [1, 3, 64, 100, 1000])
    def test_round_trip(self, n):
        x = np.random.default_rng(n).uniform(-1, 1, size=n)
        assert np.max(np.abs(ifft(fft(x), n) - x)) < 1e-9

    def test_zero_padding_recorded(self):
        s = spectrum(np.ones(100), fs=FS)
        assert (s.n, s.n_input) == (128, 100)
        np.testing.assert_allclose(s.bins, naive_dft(np.r_[np.ones(100), np.zeros(28)]), atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, 32, elements=st.floats(-1, 1)), arrays(np.float64, 32, elements=st.floats(-1, 1)),
           st.floats(-10, 10), st.floats(-10, 10))
    def test_linearity(self, x, y, a, b):
        np.testing.assert_allclose(fft(a * x + b * y), a * fft(x) + b * fft(y), atol=1e-9)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(2, 300), elements=st.floats(-1e3, 1e3)))
    def test_conjugate_symmetry(self, x):
        X = fft(x)
        N = len(X)
        mirrored = np.conj(X[(-np.arange(N)) % N])
        assert np.all(np.abs(X - mirrored) <= 1e-9 * max(1.0, np.max(np.abs(X))))


class TestStft:
    def test_constant_dominant_dc(self):
        S = stft(np.full(256, 2.0), FS)
        mags = np.abs(S.frames)
        assert np.all(np.argmax(mags, axis=1) == 0)
        # periodic Hann leaks only into bin 1
        assert np.max(mags[:, 2:]) < 1e-9 * np.max(mags[:, 0])

    def test_sine_bin(self):
        S = stft(SINE, FS)
        assert np.all(np.argmax(np.abs(S.frames), axis=1) == round(64 * 64 / FS))

    def test_single_frame(self):
        assert stft(np.zeros(64), FS).frames.shape == (1, 33)

    @pytest.mark.parametrize("n, hop", [(200, 16), (1000, 7), (64, 64)])
    def test_frame_count(self, n, hop):
        assert len(stft(np.zeros(n), FS, 64, hop).frames) == (n - 64) // hop + 1

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            stft(np.zeros(63), FS)

    def test_threads_identical(self):
        x = np.random.default_rng(0).normal(size=4096)
        assert stft(x, FS, threads=1).frames.tobytes() == stft(x, FS, threads=4).frames.tobytes()


class TestRender:
    @pytest.mark.parametrize("kind", list(ImageKind))
    def test_shape_and_png(self, kind):
        img = render(SINE[:600], FS, kind)
        assert img.pixels.shape == (SIZE, SIZE, 3) and img.pixels.dtype == np.uint8
        decoded = np.asarray(Image.open(io.BytesIO(img.to_png())).convert("RGB"))
        np.testing.assert_array_equal(decoded, img.pixels)

    def test_ppm_header(self):
        data = render(CONSTANT, FS, "waveform").to_ppm()
        assert data.startswith(b"P6\n224 224\n255\n") and len(data) == 15 + 224 * 224 * 3

    def test_constant_waveform_is_midline(self):
        rows = waveform_rows(CONSTANT)
        assert set(rows.tolist()) == {round(0.5 * SIZE - 0.5)}
        img = render(CONSTANT, FS, "waveform").pixels[:, :, 0]
        assert np.all((img == 0).sum(axis=0) == 1)

    def test_waveform_band(self):
        rows = waveform_rows(SINE)
        assert rows.min() == round(0.05 * (SIZE - 1)) and rows.max() == round(0.95 * (SIZE - 1))

    def test_psd_brightest_row_is_sine_bin(self):
        idx = _lut_index(render(SINE, FS, "spec-psd").pixels)
        brightest = int(np.argmax(idx.mean(axis=1)))
        # image row i shows bin 32 - (i * 33) // 224 (low frequencies at the bottom)
        assert 32 - (brightest * 33) // SIZE == 8

    def test_psd_values_in_range(self):
        m = spectrogram_matrix(SINE, FS, "spec-psd")
        assert m.min() >= -120.0 and m.max() <= 0.0

    def test_chirp_phase_is_unwrapped(self):
        t = np.arange(4096) / FS
        chirp = np.sin(2 * np.pi * (10 * t + 20 * t ** 2))
        m = spectrogram_matrix(chirp, FS, "spec-phase")
        assert np.max(np.abs(np.diff(m, axis=1))) <= np.pi + 1e-12
        raw = spectrogram_matrix(chirp, FS, "spec-angle")
        assert np.max(np.abs(np.diff(raw, axis=1))) > np.pi

    @pytest.mark.parametrize("name, x, kind", [("constant-waveform", CONSTANT, "waveform"),
                                               ("sine-psd", SINE, "spec-psd")])
    def test_golden_images(self, name, x, kind):
        first = render(x, FS, kind, threads=1)
        second = render(x, FS, kind, threads=1)
        four = render(x, FS, kind, threads=4)
        assert _sha(first) == _sha(second) == _sha(four) == GOLDEN[name]
        assert first.to_png() == second.to_png() == four.to_png()

    def test_too_short(self):
        with pytest.raises(SignalTooShort):
            render([1.0], FS, "waveform")
        with pytest.raises(SignalTooShort):
            render(np.zeros(10), FS, "spec-angle")
