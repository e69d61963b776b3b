import math

import numpy as np
import pytest

from tdaudio.attacks import (
    AttackConfig,
    AttackSetupError,
    adaptive_transform_attack,
    clip_rng,
    combination_attack,
    concat_attack,
    opt_attack,
    prefix_words,
    run_attack,
    segment_attack,
)
from tdaudio.audio_io import AudioClip
from tdaudio.toy_asr.model import ToyAsrModel
from tdaudio.toy_asr.synth import synthesize
from tdaudio.transforms import TransformSpec, apply_transform


@pytest.fixture(scope="module")
def model():
    return ToyAsrModel.init(np.random.default_rng(0), 0.3)


@pytest.fixture(scope="module")
def clip():
    return synthesize("abc de fgh", id="u1")


def quick(target="ab", **kw):
    kw.setdefault("iterations", 15)
    kw.setdefault("c_schedule", (1.0, 10.0))
    return AttackConfig(target, **kw)


class TestConfig:
    def test_normalizes_target(self):
        assert AttackConfig("  Go  Home! ").target == "go home"

    def test_rejects_bad_schedule(self):
        with pytest.raises(ValueError):
            AttackConfig("ab", c_schedule=(10, 1))
        with pytest.raises(ValueError):
            AttackConfig("ab", c_schedule=())

    def test_rejects_bad_k(self):
        with pytest.raises(ValueError):
            AttackConfig("ab", k=1.0)
        with pytest.raises(ValueError):
            AttackConfig("ab", k_rand=(0.8, 0.2))

    def test_rejects_non_adaptive_transform(self):
        with pytest.raises(ValueError):
            AttackConfig("ab", adaptive=TransformSpec("autoencoder", rank=4))

    def test_prefix_words_rounds_up(self):
        assert prefix_words("a b c", 0.5) == "a b"
        assert prefix_words("a b c d", 0.5) == "a b"
        assert prefix_words("a", 0.2) == "a"

    def test_clip_rng_depends_on_seed_and_id(self):
        a = clip_rng(0, "x").random()
        assert a == clip_rng(0, "x").random()
        assert a != clip_rng(1, "x").random() and a != clip_rng(0, "y").random()


class TestOptAttack:
    def test_current_transcript_needs_no_perturbation(self, model, clip):
        current = model.transcribe(clip)
        assert current
        res = opt_attack(model, clip, quick(current))
        assert res.success and res.iterations == 0
        assert not res.delta.values.any() and res.db == -math.inf

    def test_zero_weight_never_moves(self, model, clip):
        target = "jjj"
        assert model.transcribe(clip) != target
        res = opt_attack(model, clip, quick(target, c_schedule=(0.0,)))
        assert not res.success
        assert not res.delta.values.any()

    def test_result_is_what_the_model_hears(self, model, clip):
        res = opt_attack(model, clip, quick("jjj"))
        assert res.transcript == model.transcribe(res.adversarial)
        assert res.success == (res.transcript == "jjj")
        assert res.adversarial.samples.dtype == np.int16
        assert np.array_equal(res.delta.values * 32768,
                              res.adversarial.samples.astype(int) - clip.samples)

    def test_objective_trace_non_increasing(self, model, clip):
        trace = opt_attack(model, clip, quick("jjj", c_schedule=(1.0,), iterations=30)).objective_trace
        assert len(trace) == 31
        assert all(b <= a for a, b in zip(trace, trace[1:]))

    def test_deterministic(self, model, clip):
        a = opt_attack(model, clip, quick("jjj"))
        b = opt_attack(model, clip, quick("jjj"))
        assert np.array_equal(a.adversarial.samples, b.adversarial.samples)
        assert a.objective_trace == b.objective_trace

    def test_stays_inside_int16(self, model):
        loud = AudioClip("l", np.where(np.arange(4000) % 40 < 20, 32767, -32768))
        res = opt_attack(model, loud, quick("jjj", step=0.5))
        assert res.adversarial.samples.min() >= -32768 and res.adversarial.samples.max() <= 32767

    def test_target_too_long(self, model):
        short = AudioClip("s", np.ones(600, dtype=np.int16))
        with pytest.raises(AttackSetupError):
            opt_attack(model, short, quick("abcdefghij abcdefghij"))


class TestAdaptive:
    def test_quantize_steps_are_multiples_of_q(self, model, clip):
        res = adaptive_transform_attack(model, clip, quick("jjj", adaptive=TransformSpec("quantize", q=256),
                                                             step=0.05))
        steps = np.round(res.delta.values * 32768).astype(int)
        assert steps.any()
        assert np.all(steps % 256 == 0)

    @pytest.mark.parametrize("spec", [TransformSpec("quantize", q=512), TransformSpec("downsample", factor=2),
                                      TransformSpec("smooth", smooth_kind="median", K=4),
                                      TransformSpec("smooth", smooth_kind="average", K=2)])
    def test_judged_on_transformed_audio(self, model, clip, spec):
        res = adaptive_transform_attack(model, clip, quick("jjj", adaptive=spec))
        assert res.transcript == model.transcribe(apply_transform(res.adversarial, spec))

    def test_downsample_perturbation_is_band_limited(self, model, clip):
        res = adaptive_transform_attack(model, clip, quick("jjj", adaptive=TransformSpec("downsample", factor=2),
                                                           step=0.01))
        d = res.delta.values
        spec = np.abs(np.fft.rfft(d)) ** 2
        f = np.fft.rfftfreq(d.size, 1 / 16000)
        # int16 rounding leaves a small broadband floor
        assert spec[f > 4500].sum() < 0.1 * spec.sum()

    def test_needs_a_transform(self, model, clip):
        with pytest.raises(ValueError):
            adaptive_transform_attack(model, clip, quick("jjj"))


class TestSegment:
    def test_only_the_prefix_moves(self, model, clip):
        res = segment_attack(model, clip, quick("jjj", k=0.5, step=0.01))
        n = math.floor(0.5 * len(clip))
        assert res.delta.values[:n].any()
        assert not res.delta.values[n:].any()
        assert res.variant == "segment"


class TestConcat:
    def test_silence_variant(self, model, clip):
        res = concat_attack(model, clip, quick("jjj", variant="concat_silence"))
        assert [p["target"] for p in res.parts] == ["jjj", ""]
        assert res.transcript == model.transcribe(res.adversarial)
        assert len(res.adversarial) == len(clip)

    def test_split_variant_targets(self, model, clip):
        res = concat_attack(model, clip, quick("ab cd ef", variant="concat_split", k=0.5))
        assert [p["target"] for p in res.parts] == ["ab cd", "ef"]

    def test_part_too_short(self, model):
        tiny = AudioClip("t", np.zeros(300, dtype=np.int16))
        with pytest.raises(AttackSetupError):
            concat_attack(model, tiny, quick("a", variant="concat_split", k=0.5))


class TestCombination:
    def test_prefix_transcripts_recorded(self, model, clip):
        res = combination_attack(model, clip, quick("ab cd", k_A=(0.5, 0.75)))
        assert set(res.prefix_transcripts) == {"0.5", "0.75"}
        n = len(clip)
        assert res.prefix_transcripts["0.5"] == model.transcribe_wave(
            res.adversarial.to_real().values[:math.floor(0.5 * n)])

    def test_rand_is_seeded(self, model, clip):
        a = combination_attack(model, clip, quick("ab cd", k_rand=(0.2, 0.8), seed=1))
        b = combination_attack(model, clip, quick("ab cd", k_rand=(0.2, 0.8), seed=1))
        c = combination_attack(model, clip, quick("ab cd", k_rand=(0.2, 0.8), seed=2))
        assert np.array_equal(a.adversarial.samples, b.adversarial.samples)
        assert not np.array_equal(a.adversarial.samples, c.adversarial.samples)

    def test_dispatch(self, model, clip):
        res = run_attack(model, clip, quick("ab", variant="combination"))
        assert res.variant == "combination"
        assert run_attack(model, clip, quick("ab")).variant == "plain"
