import math
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdaudio.audio_io import (
    AudioClip,
    MalformedWavError,
    TruncatedWavError,
    UndefinedLoudnessError,
    UnsupportedEncodingError,
    db_distortion,
    db_scale,
    parse_wav,
    read_wav,
    real_to_int16,
    write_wav,
)


def riff(fmt_fields, pcm: bytes, declared=None) -> bytes:
    """Build a WAV by hand, straight from the RIFF layout."""
    fmt = struct.pack("<HHIIHH", *fmt_fields)
    size = len(pcm) if declared is None else declared
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", size) + pcm
    return b"RIFF" + struct.pack("<I", len(body)) + body


def pcm16_mono(rate=16000):
    return (1, 1, rate, rate * 2, 2, 16)


class TestReadWav:
    def test_silence(self, tmp_path):
        path = tmp_path / "silence.wav"
        path.write_bytes(riff(pcm16_mono(), bytes(32000)))
        clip = read_wav(path)
        assert len(clip) == 16000
        assert clip.sample_rate == 16000
        assert not clip.samples.any()
        assert clip.id == "silence"

    def test_hand_built_header(self):
        pcm = b"\x00\x00" + b"\x64\x00" + b"\x9c\xff"  # 0, 100, -100 little endian
        data = riff(pcm16_mono(), pcm)
        assert len(data) == 44 + 6
        clip = parse_wav(data)
        assert clip.samples.tolist() == [0, 100, -100]

    def test_stereo_rejected(self):
        with pytest.raises(UnsupportedEncodingError):
            parse_wav(riff((1, 2, 16000, 64000, 4, 16), bytes(8)))

    def test_non_pcm_rejected(self):
        with pytest.raises(UnsupportedEncodingError):
            parse_wav(riff((3, 1, 16000, 64000, 4, 32), bytes(8)))

    def test_eight_bit_rejected(self):
        with pytest.raises(UnsupportedEncodingError):
            parse_wav(riff((1, 1, 16000, 16000, 1, 8), bytes(8)))

    def test_bad_signature(self):
        with pytest.raises(MalformedWavError):
            parse_wav(b"RIFX" + bytes(40))

    def test_truncated_data(self):
        with pytest.raises(TruncatedWavError):
            parse_wav(riff(pcm16_mono(), bytes(10), declared=100))

    def test_error_kinds_are_distinct(self):
        kinds = {MalformedWavError, UnsupportedEncodingError, TruncatedWavError}
        assert len(kinds) == 3
        assert not issubclass(TruncatedWavError, MalformedWavError)

    def test_skips_unknown_chunks(self):
        data = riff(pcm16_mono(), b"\x01\x00")
        # splice a LIST chunk between fmt and data
        extra = b"LIST" + struct.pack("<I", 3) + b"abc\x00"
        spliced = data[:36] + extra + data[36:]
        spliced = spliced[:4] + struct.pack("<I", len(spliced) - 8) + spliced[8:]
        assert parse_wav(spliced).samples.tolist() == [1]


class TestWriteWav:
    @pytest.mark.parametrize("samples", [[0, 100, -100], [32767, -32768]])
    def test_round_trip(self, tmp_path, samples):
        clip = AudioClip("x", samples)
        write_wav(clip, tmp_path / "x.wav")
        assert read_wav(tmp_path / "x.wav") == clip
        assert (tmp_path / "x.wav").stat().st_size == 44 + 2 * len(samples)

    def test_random_round_trips(self, tmp_path):
        rng = np.random.default_rng(3)
        for i in range(10):
            clip = AudioClip(f"r{i}", rng.integers(-32768, 32768, size=rng.integers(1, 5000)),
                             int(rng.choice([8000, 16000, 44100])))
            path = tmp_path / f"r{i}.wav"
            write_wav(clip, path)
            assert read_wav(path) == clip

    @settings(max_examples=50, deadline=None)
    @given(st.lists(st.integers(-32768, 32767), min_size=1, max_size=300),
           st.integers(1, 96000))
    def test_round_trip_property(self, samples, rate):
        clip = AudioClip("p", samples, rate)
        from tdaudio.audio_io import wav_bytes
        assert parse_wav(wav_bytes(clip), "p") == clip


class TestClip:
    def test_rejects_out_of_range(self):
        with pytest.raises(ValueError):
            AudioClip("x", [40000])

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            AudioClip("x", [])

    def test_real_round_trip(self):
        rng = np.random.default_rng(0)
        s = rng.integers(-32768, 32768, 1000)
        clip = AudioClip("x", s)
        assert np.array_equal(real_to_int16(clip.to_real().values), clip.samples)


class TestDb:
    def test_known_levels(self):
        assert db_scale(AudioClip("a", [0, -1000, 10])) == pytest.approx(60.0, abs=1e-12)
        assert db_scale(AudioClip("a", [1, 0])) == 0.0

    def test_matches_scan(self):
        rng = np.random.default_rng(1)
        s = rng.integers(-30000, 30000, 777)
        peak = 0
        for v in s:
            peak = max(peak, abs(int(v)))
        assert db_scale(AudioClip("a", s)) == pytest.approx(20 * math.log10(peak), abs=1e-12)

    def test_all_zero(self):
        with pytest.raises(UndefinedLoudnessError):
            db_scale(AudioClip("z", [0, 0]))

    def test_scale_equivariance(self):
        s = np.array([3, -7, 120])
        assert db_scale(AudioClip("a", 10 * s)) - db_scale(AudioClip("a", s)) == pytest.approx(20.0)

    def test_distortion(self):
        x = AudioClip("x", [1000, -2000, 500])
        assert db_distortion(x, x) == 0.0
        assert db_distortion(x, AudioClip("d", [100, -200, 50])) == pytest.approx(-20.0)

    def test_distortion_length_mismatch(self):
        with pytest.raises(ValueError):
            db_distortion(AudioClip("x", [1, 2]), AudioClip("d", [1]))
