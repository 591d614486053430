"""WAV file I/O: PCM16, PCM24 and float32, any sample rate.

Reading goes through scipy (which handles 24-bit PCM by widening to int32);
24-bit writing is done by hand since scipy does not support it. Float data
is normalized to [-1, 1] on both paths.
"""

import wave

import numpy as np
from scipy.io import wavfile

from .dsp import MonoSignal, MultiChannelSignal

ENCODINGS = ("pcm16", "pcm24", "float32")


def read_wav(path):
    """Read a WAV file; returns (rate, float64 array shaped (n,) or (n, ch))."""
    rate, data = wavfile.read(path)
    if data.dtype == np.int16:
        out = data.astype(np.float64) / 2**15
    elif data.dtype == np.int32:
        # scipy widens 24-bit PCM into the top bytes of int32
        out = data.astype(np.float64) / 2**31
    elif data.dtype == np.uint8:
        out = (data.astype(np.float64) - 128.0) / 128.0
    else:
        out = data.astype(np.float64)
    return int(rate), out


def read_mono(path):
    rate, data = read_wav(path)
    if data.ndim == 2:
        if data.shape[1] != 1:
            raise ValueError(f"{path} has {data.shape[1]} channels, expected mono")
        data = data[:, 0]
    return MonoSignal(data, rate)


def read_multichannel(path):
    rate, data = read_wav(path)
    return MultiChannelSignal.from_array(data, rate)


def write_wav(path, data, rate, encoding="float32"):
    """Write samples (values in [-1, 1]) as PCM16, PCM24 or float32."""
    if encoding not in ENCODINGS:
        raise ValueError(f"unknown encoding {encoding!r}")
    a = np.asarray(data, dtype=np.float64)
    if a.ndim == 1:
        a = a[:, None]
    if encoding == "float32":
        wavfile.write(path, int(rate), np.ascontiguousarray(a.astype(np.float32)))
        return
    if encoding == "pcm16":
        q = np.clip(np.round(a * 2**15), -(2**15), 2**15 - 1).astype(np.int16)
        wavfile.write(path, int(rate), np.ascontiguousarray(q))
        return
    q = np.clip(np.round(a * 2**23), -(2**23), 2**23 - 1).astype("<i4")
    raw = q.reshape(-1).view(np.uint8).reshape(-1, 4)[:, :3].tobytes()
    with wave.open(str(path), "wb") as w:
        w.setnchannels(a.shape[1])
        w.setsampwidth(3)
        w.setframerate(int(rate))
        w.writeframes(raw)


def write_signal(path, signal, encoding="float32"):
    """Write a MonoSignal or MultiChannelSignal."""
    if isinstance(signal, MonoSignal):
        write_wav(path, signal.samples, signal.rate, encoding)
    elif isinstance(signal, MultiChannelSignal):
        write_wav(path, signal.to_array(), signal.rate, encoding)
    else:
        raise TypeError(f"cannot write {type(signal).__name__}")
