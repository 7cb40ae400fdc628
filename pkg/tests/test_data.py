import json

import numpy as np
import pytest
import torch

from charvoc.data import (
    AudioTooShort,
    ManifestEntry,
    PseudoCodecConfig,
    TrainingTriplet,
    Utterance,
    build_triplets,
    load_triplet_cache,
    make_corpus,
    pseudo_codec_encode,
    read_manifest,
    read_wav,
    save_triplet_cache,
    synth_utterance,
    tone_pair,
    write_corpus,
    write_wav,
)
from charvoc.symbols import UnknownSymbol

CFG = PseudoCodecConfig()


def test_synth_durations():
    audio, text = synth_utterance("a")
    assert len(audio) == 640 and text == "a"
    audio, _ = synth_utterance("ab cd")
    assert len(audio) == 5 * 640


def test_synth_deterministic():
    a1, _ = synth_utterance("hello world", seed=3)
    a2, _ = synth_utterance("hello world", seed=3)
    a3, _ = synth_utterance("hello world", seed=4)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, a3)


def test_synth_rejects_unknown():
    with pytest.raises(UnknownSymbol):
        synth_utterance("a'b")


def test_tone_pairs_distinct():
    pairs = [tone_pair(c) for c in " abcdefghijklmnopqrstuvwxyz"]
    assert len(set(pairs)) == 27
    assert all(hi < 4000 for _, hi in pairs)


def test_codec_deterministic_and_framed():
    audio, _ = synth_utterance("abc", seed=1)
    audio = audio[:1900]
    t1 = pseudo_codec_encode(audio, CFG)
    t2 = pseudo_codec_encode(audio.copy(), CFG)
    assert t1.shape == (2, 1900 // 64)
    assert np.array_equal(t1, t2)
    assert t1.min() >= 0 and t1.max() < 64
    with pytest.raises(AudioTooShort):
        pseudo_codec_encode(np.zeros(10), CFG)


def test_codec_separates_distinct_tones():
    a, _ = synth_utterance("aaaa", seed=0)
    b, _ = synth_utterance("mmmm", seed=0)
    ta, tb = pseudo_codec_encode(a, CFG), pseudo_codec_encode(b, CFG)
    differing = np.mean(np.any(ta != tb, axis=0))
    assert differing > 0.5


def test_wav_round_trip(tmp_path):
    x = np.sin(np.linspace(0, 100, 800)).astype(np.float32) * 0.5
    write_wav(tmp_path / "x.wav", x, 8000)
    y, rate = read_wav(tmp_path / "x.wav")
    assert rate == 8000
    assert np.max(np.abs(x - y)) < 1 / 32767 + 1e-7


def test_manifest_round_trip(tmp_path):
    utts = make_corpus(3, seed=1)
    path = write_corpus(utts, tmp_path, "m.jsonl")
    lines = [json.loads(l) for l in path.read_text().splitlines()]
    assert set(lines[0]) == {"id", "audio", "text", "duration"}
    entries = read_manifest(path)
    assert [e.id for e in entries] == [u.id for u in utts]
    loaded = entries[0].load()
    assert loaded.text == utts[0].text
    assert abs(entries[0].duration - len(utts[0].audio) / 8000) < 1e-9


def test_manifest_rejects_duplicates(tmp_path):
    line = json.dumps({"id": "x", "audio": "a.wav", "text": "a", "duration": 1.0})
    (tmp_path / "m.jsonl").write_text(line + "\n" + line + "\n")
    with pytest.raises(ValueError):
        read_manifest(tmp_path / "m.jsonl")


def test_build_triplets_contract(small_triplets):
    triplets, recog = small_triplets
    utts = make_corpus(12, seed=5)
    assert [t.id for t in triplets] == [u.id for u in utts]
    for t in triplets:
        assert t.c.shape == (t.frames,)
        assert t.u.shape == (t.frames * 64,)
        assert t.a_bar.shape == (2, t.frames)


def test_build_triplets_reports_failures(small_triplets):
    _, recog = small_triplets
    good = make_corpus(2, seed=9)
    bad = Utterance("short", "a", np.zeros(10, dtype=np.float32), 8000)
    triplets, failures = build_triplets([good[0], bad, good[1]], recog, CFG)
    assert [t.id for t in triplets] == [good[0].id, good[1].id]
    assert [f[0] for f in failures] == ["short"]


def test_triplet_cache_round_trip(small_triplets, tmp_path):
    triplets, _ = small_triplets
    save_triplet_cache(triplets[:3], tmp_path / "cache")
    loaded = load_triplet_cache(tmp_path / "cache")
    for a, b in zip(triplets[:3], loaded):
        assert a.id == b.id and a.text == b.text
        assert np.array_equal(a.u, b.u) and np.array_equal(a.c, b.c) and np.array_equal(a.a_bar, b.a_bar)


def test_triplets_from_trained_recognizer_not_collapsed(trained_recognizer, toy_corpus):
    triplets, failures = build_triplets(toy_corpus[0][:100], trained_recognizer, CFG)
    assert not failures
    nonblank = np.mean(np.concatenate([t.c for t in triplets]) != 0)
    assert nonblank > 0.2
