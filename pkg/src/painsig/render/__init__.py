from .image import ImageKind, SignalImage, encode_png, render, spectrogram_matrix
from .spectral import ComplexSpectrum, Stft, fft, ifft, spectrum, stft

__all__ = ["ComplexSpectrum", "ImageKind", "SignalImage", "Stft", "encode_png", "fft", "ifft",
           "render", "spectrogram_matrix", "spectrum", "stft"]
