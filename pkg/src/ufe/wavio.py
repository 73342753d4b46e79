"""RIFF WAV reader/writer for 16-bit PCM and 32-bit float, mono to multi-channel.

Samples are exchanged as float arrays shaped [num_channels x num_samples],
scaled to [-1, 1] for integer codecs. Only plain PCM (format tag 1) and
IEEE float (format tag 3) are handled; anything else raises.
"""

import struct

import numpy as np

PCM_16 = 1
IEEE_FLOAT = 3


class WavFormatError(ValueError):
    """Malformed or unsupported WAV content, with the failing byte offset."""


def _fail(offset, why):
    raise WavFormatError(f"bad WAV data at byte {offset}: {why}")


def read_wav(path):
    """
    Read a RIFF WAV file
    Arguments:
        path: file to read
    Return:
        samples: float64 array, shape as M x S
        sample_rate: int, in Hz
    """
    with open(path, "rb") as fd:
        blob = fd.read()
    if len(blob) < 12:
        _fail(0, f"file too short for a RIFF header ({len(blob)} bytes)")
    if blob[0:4] != b"RIFF":
        _fail(0, f"expected 'RIFF' magic, found {blob[0:4]!r}")
    if blob[8:12] != b"WAVE":
        _fail(8, f"expected 'WAVE' form type, found {blob[8:12]!r}")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(blob):
        chunk_id = blob[pos:pos + 4]
        (chunk_size,) = struct.unpack_from("<I", blob, pos + 4)
        body = blob[pos + 8:pos + 8 + chunk_size]
        if len(body) < chunk_size:
            _fail(pos, f"chunk {chunk_id!r} claims {chunk_size} bytes, "
                       f"only {len(body)} remain")
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                _fail(pos, f"'fmt ' chunk too short ({chunk_size} bytes)")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            data = (pos + 8, body)
        pos += 8 + chunk_size + (chunk_size & 1)

    if fmt is None:
        _fail(pos, "no 'fmt ' chunk found")
    if data is None:
        _fail(pos, "no 'data' chunk found")
    tag, channels, rate, _byte_rate, block_align, bits = fmt
    if channels < 1:
        _fail(12, "channel count must be >= 1")
    data_pos, body = data

    if tag == PCM_16 and bits == 16:
        raw = np.frombuffer(body[:len(body) - len(body) % (2 * channels)],
                            dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif tag == IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(body[:len(body) - len(body) % (4 * channels)],
                            dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        _fail(data_pos, f"unsupported codec: format tag {tag} "
                        f"with {bits} bits per sample")
    # interleaved S x M => M x S
    return np.ascontiguousarray(samples.reshape(-1, channels).T), rate


def write_wav(path, samples, sample_rate, codec="float32"):
    """
    Write a RIFF WAV file
    Arguments:
        samples: array, shape as M x S (1D input treated as mono)
        sample_rate: int, in Hz
        codec: "float32" (lossless) or "pcm16" (clipped to [-1, 1])
    """
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    channels, _ = samples.shape
    interleaved = samples.T.reshape(-1)
    if codec == "float32":
        payload = interleaved.astype("<f4").tobytes()
        tag, bits = IEEE_FLOAT, 32
    elif codec == "pcm16":
        quant = np.clip(np.rint(interleaved * 32768.0), -32768, 32767)
        payload = quant.astype("<i2").tobytes()
        tag, bits = PCM_16, 16
    else:
        raise ValueError(f"unknown codec {codec!r}, use 'float32' or 'pcm16'")

    block_align = channels * bits // 8
    header = struct.pack(
        "<4sI4s4sIHHIIHH4sI",
        b"RIFF", 36 + len(payload), b"WAVE",
        b"fmt ", 16, tag, channels, sample_rate,
        sample_rate * block_align, block_align, bits,
        b"data", len(payload))
    with open(path, "wb") as fd:
        fd.write(header)
        fd.write(payload)
