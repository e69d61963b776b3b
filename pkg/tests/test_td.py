import numpy as np
import pytest

from tdaudio.audio_io import AudioClip
from tdaudio.backends import ScriptedBackend
from tdaudio.td import (
    DegeneratePrefixError,
    TdConfig,
    consistency_distance,
    detect_batch,
    split_prefix,
    td_from_transcripts,
    td_score,
    truncate_transcript,
)


def clip(id="c", n=16000):
    return AudioClip(id, np.arange(n) % 100)


class TestSplitPrefix:
    def test_half(self):
        assert len(split_prefix(clip(), 0.5)) == 8000

    def test_composition(self):
        c = clip(n=16001)
        twice = split_prefix(split_prefix(c, 0.5), 0.5)
        once = split_prefix(c, 0.25)
        assert np.array_equal(twice.samples, once.samples)

    def test_partition(self):
        c = clip(n=999)
        p = split_prefix(c, 1 / 3)
        rest = c.samples[len(p):]
        assert np.array_equal(np.concatenate([p.samples, rest]), c.samples)
        assert p.sample_rate == c.sample_rate

    def test_degenerate(self):
        with pytest.raises(DegeneratePrefixError):
            split_prefix(clip(n=1), 0.5)


class TestTruncate:
    def test_word_example(self):
        whole = "then good bye said the rats and they went home"
        assert truncate_transcript(whole, "then good bye said the raps") == "then good bye said the rats"

    def test_whole_shorter(self):
        assert truncate_transcript("a b", "x y z w") == "a b"

    def test_empty(self):
        assert truncate_transcript("", "x y") == ""

    def test_identity(self):
        for s in ("", "a", "ab cd e"):
            assert truncate_transcript(s, s, "word") == s
            assert truncate_transcript(s, s, "char") == s

    def test_char(self):
        assert truncate_transcript("abc def", "xyzw", "char") == "abc"
        assert truncate_transcript("abc def", "xyzwv", "char") == "abc d"


class TestDistance:
    def test_benign_pair(self):
        assert consistency_distance("then good bye said the raps", "then good bye said the rats",
                                    "wer") == pytest.approx(1 / 6)

    def test_adversarial_pair(self):
        assert consistency_distance("thes on adequate", "this is an", "wer") == 1.0

    def test_empty_rules(self):
        for m in ("wer", "cer", "lcp"):
            assert consistency_distance("", "", m) == 0.0
            assert consistency_distance("", "abc", m) == 1.0
            assert consistency_distance("abc", "", m) == 1.0

    def test_lcp_ratio(self):
        assert consistency_distance("abcd", "abxy", "lcp") == pytest.approx(0.5)
        assert consistency_distance("ab", "abcd", "lcp") == pytest.approx(0.5)

    def test_ranges(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            a = "".join(rng.choice(list("ab "), rng.integers(0, 8))).strip()
            b = "".join(rng.choice(list("ab "), rng.integers(0, 8))).strip()
            a, b = " ".join(a.split()), " ".join(b.split())
            assert 0 <= consistency_distance(a, b, "lcp") <= 1
            assert consistency_distance(a, b, "wer") >= 0
            assert consistency_distance(a, b, "cer") >= 0


class TestScore:
    def test_truncation_choices(self):
        out = td_from_transcripts("x", 0.5, "ab c", "ab cd ef", TdConfig())
        assert out.s_whole_k == {"word": "ab cd", "char": "ab c"}
        assert out.distances["cer"] == 0.0
        assert out.distances["wer"] == 0.5
        forced = td_from_transcripts("x", 0.5, "ab c", "ab cd ef", TdConfig(truncation="char"))
        assert forced.distances["wer"] == 0.0

    def test_scripted_consistent(self):
        be = ScriptedBackend({"c": "hello world", "c#prefix": "hello"})
        out = td_score(be, clip(), TdConfig())
        assert out.distances == {"wer": 0.0, "cer": 0.0, "lcp": 0.0}
        assert out.k == 0.5

    def test_rand_k_deterministic_per_clip(self):
        cfg = TdConfig(k_rand=(0.2, 0.8), seed=3)
        ks = [cfg.k_for(f"c{i}") for i in range(50)]
        assert all(0.2 <= k <= 0.8 for k in ks)
        assert ks == [TdConfig(k_rand=(0.2, 0.8), seed=3).k_for(f"c{i}") for i in range(50)]
        assert ks != [TdConfig(k_rand=(0.2, 0.8), seed=4).k_for(f"c{i}") for i in range(50)]
        assert len(set(ks)) == 50

    def test_config_validation(self):
        with pytest.raises(ValueError):
            TdConfig(k=1.0)
        with pytest.raises(ValueError):
            TdConfig(k_rand=(0.8, 0.2))
        with pytest.raises(ValueError):
            TdConfig(metric="bleu")


class TestDetectBatch:
    def test_records_and_failures(self):
        table = {"b": "ab cd", "b#prefix": "ab", "a": "ab cd", "a#prefix": "xy"}
        be = ScriptedBackend(table)
        clips = [(clip("b"), 0), (clip("a"), 1), (clip("missing"), 1)]
        recs = detect_batch(be, clips, TdConfig())
        assert [r.id for r in recs] == ["b", "a", "missing"]
        assert recs[0].score == 0.0 and recs[1].score == 1.0
        assert recs[2].failed and recs[2].score is None
