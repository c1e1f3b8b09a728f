"""Transmit waveform construction and the matching receive-side conversion.

Stages: training-sequence frame -> bipolar symbols -> replication upsampling
-> low-pass smoothing -> carrier up-conversion with band-pass -> (channel)
-> complex down-conversion. All filters are linear-phase FIR applied in
'same' mode, so every stage output stays time-aligned with its input.
"""

import numpy as np
from scipy.io import wavfile

from .config import SignalConfig

# GSM 05.02 normal-burst training sequence codes, 26 bits each
_TSC_TABLE = (
    "00100101110000100010010111",
    "00101101110111100010110111",
    "01000011101110100100001110",
    "01000111101101000100011110",
    "00011010111001000001101011",
    "01001110101100000100111010",
    "10100111110110001010011111",
    "11101111000100101110111100",
)


def training_sequence(tsc_index: int = 0) -> np.ndarray:
    if not 0 <= tsc_index <= 7:
        raise ValueError(f"tsc_index must be in [0, 7], got {tsc_index}")
    return np.array([int(b) for b in _TSC_TABLE[tsc_index]], dtype=np.int8)


def build_frame(tsc: np.ndarray, frame_bits: int) -> np.ndarray:
    """Training sequence first, zero guard bits after.

    The guard tail absorbs channel echoes so consecutive frames do not
    overlap inside the estimation window.
    """
    tsc = np.asarray(tsc, dtype=np.int8)
    if frame_bits < len(tsc):
        raise ValueError(f"frame_bits {frame_bits} < sequence length {len(tsc)}")
    frame = np.zeros(frame_bits, dtype=np.int8)
    frame[: len(tsc)] = tsc
    return frame


def design_lowpass(cutoff_hz: float, sample_rate_hz: float, tap_count: int) -> np.ndarray:
    """Windowed-sinc FIR (Hamming), unity DC gain, linear phase."""
    if not 0 < cutoff_hz < sample_rate_hz / 2:
        raise ValueError(f"cutoff {cutoff_hz} outside (0, fs/2)")
    if tap_count % 2 != 1:
        raise ValueError("tap_count must be odd")
    n = np.arange(tap_count) - (tap_count - 1) // 2
    taps = np.sinc(2.0 * cutoff_hz / sample_rate_hz * n) * np.hamming(tap_count)
    return taps / taps.sum()


def _symbols(frame: np.ndarray) -> np.ndarray:
    # BPSK: bit 0 -> +1, bit 1 -> -1
    return 1.0 - 2.0 * np.asarray(frame, dtype=np.float64)


def modulate_baseband(frame: np.ndarray, cfg: SignalConfig, repeats: int = 1) -> np.ndarray:
    """Replication-upsampled, low-pass smoothed baseband.

    With repeats > 1 the frame is tiled before filtering, which yields the
    periodic steady-state waveform the transmitter actually loops.
    """
    sym = np.repeat(_symbols(frame), cfg.upsample_factor)
    sym = np.tile(sym, repeats)
    lpf = design_lowpass(cfg.lowpass_cutoff_hz, cfg.sample_rate_hz, cfg.filter_tap_count)
    # center-crop the full convolution: np.convolve "same" would return the
    # filter length instead when the frame is shorter than the filter
    full = np.convolve(sym, lpf, mode="full")
    start = (len(lpf) - 1) // 2
    smoothed = full[start:start + len(sym)]
    # the 2 kHz smoothing of a 4 kSym/s stream overshoots; rescale so the
    # baseband stays within [-1, 1] (scale is non-semantic downstream)
    peak = np.abs(smoothed).max()
    return smoothed / peak if peak > 0 else smoothed


def upconvert(baseband: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    """Mix to the carrier, band-pass around it, peak-normalize to |x| <= 1."""
    bb = np.asarray(baseband, dtype=np.float64)
    n = np.arange(len(bb))
    w = 2.0 * np.pi * cfg.carrier_hz / cfg.sample_rate_hz
    mixed = bb * np.cos(w * n)
    # band-pass realized as low-pass on the complex-shifted signal
    lpf = design_lowpass(cfg.bandpass_halfwidth_hz, cfg.sample_rate_hz, cfg.filter_tap_count)
    shifted = mixed * np.exp(-1j * w * n)
    passband = 2.0 * np.real(np.convolve(shifted, lpf, mode="same") * np.exp(1j * w * n))
    peak = np.abs(passband).max()
    if peak > 0:
        passband = passband / peak
    return passband


def downconvert(passband: np.ndarray, cfg: SignalConfig) -> np.ndarray:
    """Complex baseband: mix down by the carrier, low-pass at the symbol band."""
    pb = np.asarray(passband, dtype=np.float64)
    n = np.arange(len(pb))
    w = 2.0 * np.pi * cfg.carrier_hz / cfg.sample_rate_hz
    lpf = design_lowpass(cfg.lowpass_cutoff_hz, cfg.sample_rate_hz, cfg.filter_tap_count)
    return np.convolve(pb * np.exp(-1j * w * n), lpf, mode="same")


def sounding_frame(cfg: SignalConfig) -> np.ndarray:
    """One frame of bits for the configured training sequence."""
    return build_frame(training_sequence(cfg.tsc_index), cfg.frame_bits)


def sounding_passband(cfg: SignalConfig, repeats: int) -> np.ndarray:
    """The looping transmit waveform: `repeats` frames, modulated end to end."""
    return upconvert(modulate_baseband(sounding_frame(cfg), cfg, repeats=repeats), cfg)


def write_wav(path, samples: np.ndarray, sample_rate_hz: float) -> None:
    """Mono 32-bit float WAV, amplitudes clipped to [-1, 1]."""
    clipped = np.clip(np.asarray(samples, dtype=np.float64), -1.0, 1.0)
    wavfile.write(path, int(sample_rate_hz), clipped.astype(np.float32))


def read_wav(path, expected_rate: float | None = None) -> tuple[np.ndarray, float]:
    rate, data = wavfile.read(path)
    if expected_rate is not None and float(rate) != float(expected_rate):
        raise ValueError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz"
        )
    data = np.asarray(data)
    if data.ndim > 1:
        data = data[:, 0]
    if data.dtype == np.int16:
        data = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        data = data.astype(np.float64) / 2147483648.0
    else:
        data = data.astype(np.float64)
    return data, float(rate)
