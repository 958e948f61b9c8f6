"""STFT analysis-synthesis on a radix-2 DFT, and the ideal-ratio-mask oracle separator.

The oracle applies per-bin magnitude-ratio masks to the mixture spectrogram
(mixture phase retained) and inverts; it is the upper bound that time-frequency
masking methods cannot exceed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import FrameGeometry, Waveform, frame

DEFAULT_FFT_SIZE = 256  # 32 ms at 8 kHz
DEFAULT_HOP = 128


def _is_power_of_two(n: int) -> bool:
    return n >= 1 and (n & (n - 1)) == 0


def _bit_reverse_indices(n: int) -> np.ndarray:
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for _ in range(bits):
        rev = (rev << 1) | (idx & 1)
        idx >>= 1
    return rev


def fft(x) -> np.ndarray:
    """Forward DFT over the last axis via iterative radix-2 Cooley-Tukey.

    Length must be a power of two. Unnormalized convention:
    X[k] = sum_n x[n] exp(-2j*pi*n*k/N).
    """
    x = np.asarray(x)
    n = x.shape[-1]
    if not _is_power_of_two(n):
        raise ValueError(f"FFT length must be a power of two, got {n}")
    shape = x.shape
    out = x[..., _bit_reverse_indices(n)].astype(np.complex128)
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = out.reshape(-1, n // size, size)
        even = blocks[:, :, :half]
        odd = blocks[:, :, half:] * twiddle
        out = np.concatenate([even + odd, even - odd], axis=2).reshape(shape)
        size *= 2
    return out


def ifft(x) -> np.ndarray:
    """Inverse of fft(), same power-of-two length rule."""
    x = np.asarray(x, dtype=np.complex128)
    return np.conj(fft(np.conj(x))) / x.shape[-1]


def sqrt_hann_window(n: int) -> np.ndarray:
    """Square root of the periodic Hann window; exact COLA at 50% overlap."""
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n))


@dataclass(eq=False)
class Spectrogram:
    """Non-negative-frequency STFT bins [num_frames x (fft_size/2 + 1)]."""

    bins: np.ndarray
    fft_size: int
    hop: int
    window: str
    original_len: int
    sample_rate_hz: int

    @property
    def num_frames(self) -> int:
        return self.bins.shape[0]


@dataclass(eq=False)
class MaskSet:
    """Per-source real masks in [0, 1] that sum to 1 over sources at every bin."""

    masks: list[np.ndarray]

    @property
    def num_sources(self) -> int:
        return len(self.masks)


def _validate_sizes(fft_size: int, hop: int) -> None:
    if not _is_power_of_two(fft_size):
        raise ValueError(f"fft_size must be a power of two, got {fft_size}")
    if hop < 1 or hop > fft_size:
        raise ValueError(f"hop must be in [1, fft_size], got hop={hop}, fft_size={fft_size}")


def stft(w: Waveform, fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP) -> Spectrogram:
    """Square-root-Hann windowed frames, forward DFT, non-negative bins kept."""
    _validate_sizes(fft_size, hop)
    fm = frame(w, FrameGeometry(fft_size, hop))
    windowed = fm.frames * sqrt_hann_window(fft_size)
    spec = fft(windowed)[:, : fft_size // 2 + 1]
    return Spectrogram(spec, fft_size, hop, "sqrt_hann", len(w), w.sample_rate_hz)


def istft(s: Spectrogram) -> Waveform:
    """Square-root-Hann synthesis with overlap-add and window-power normalization.

    Inverts stft() to within 1e-6 relative error on interior samples; the first
    and last fft_size samples see partial window overlap and are not covered by
    that bound.
    """
    n = s.fft_size
    num = s.num_frames
    half = n // 2
    full = np.empty((num, n), dtype=np.complex128)
    full[:, : half + 1] = s.bins
    full[:, half + 1 :] = np.conj(s.bins[:, 1:half])[:, ::-1]
    win = sqrt_hann_window(n)
    frames = ifft(full).real * win
    padded = (num - 1) * s.hop + n
    acc = np.zeros(padded)
    norm = np.zeros(padded)
    win_sq = win * win
    for t in range(num):
        sl = slice(t * s.hop, t * s.hop + n)
        acc[sl] += frames[t]
        norm[sl] += win_sq
    out = acc / np.maximum(norm, 1e-12)
    return Waveform(out[: s.original_len], s.sample_rate_hz)


def irm_masks(sources: list[Waveform], fft_size: int = DEFAULT_FFT_SIZE, hop: int = DEFAULT_HOP) -> MaskSet:
    """Ideal ratio masks: per-bin source magnitude over the total magnitude.

    Bins where every source magnitude is zero get the uniform mask 1/S.
    """
    if len(sources) < 2:
        raise ValueError(f"irm_masks needs at least 2 sources, got {len(sources)}")
    mags = [np.abs(stft(src, fft_size, hop).bins) for src in sources]
    total = np.sum(mags, axis=0)
    uniform = 1.0 / len(sources)
    with np.errstate(invalid="ignore", divide="ignore"):
        masks = [np.where(total > 0.0, m / total, uniform) for m in mags]
    return MaskSet(masks)


def irm_separate(
    mixture: Waveform,
    sources: list[Waveform],
    fft_size: int = DEFAULT_FFT_SIZE,
    hop: int = DEFAULT_HOP,
) -> list[Waveform]:
    """Oracle separation: mask the mixture STFT with the IRM, keep mixture phase, invert."""
    for src in sources:
        if len(src) != len(mixture):
            raise ValueError(f"irm_separate: source length {len(src)} != mixture length {len(mixture)}")
    mask_set = irm_masks(sources, fft_size, hop)
    mix_spec = stft(mixture, fft_size, hop)
    out = []
    for mask in mask_set.masks:
        masked = Spectrogram(
            mix_spec.bins * mask,
            fft_size,
            hop,
            mix_spec.window,
            mix_spec.original_len,
            mix_spec.sample_rate_hz,
        )
        out.append(istft(masked))
    return out
