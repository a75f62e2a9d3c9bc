import json
import math
from pathlib import Path

import numpy as np
import pytest

import tesu

ROOT = Path(__file__).resolve().parents[2]
SMOKE = ROOT / "configs" / "smoke.json"


def test_normalize_and_vocab_round_trip():
    assert tesu.normalize_text("The  CAT, sat!") == "the cat sat"
    vocab = tesu.build_vocab(["one two two three three three", "four"], 10)
    assert len(vocab) == 8
    ids = tesu.encode("three two one", vocab)
    assert tesu.decode(ids, vocab) == "three two one"
    assert tesu.Vocab.parse(vocab.serialize()).serialize() == vocab.serialize()
    assert tesu.encode("zebra", vocab) == [3]


def test_wer_examples():
    assert tesu.wer("a b c", "a b c") == 0.0
    assert tesu.wer("hello", "") == 1.0
    assert tesu.wer("a b c d", "a x c") == 0.5
    assert tesu.edit_distance(["a", "b"], ["b", "a"]) == 2
    with pytest.raises(tesu.TesuError):
        tesu.wer("", "a")


def test_render_shape_and_determinism():
    a = tesu.render([5, 6, 7], seed=3, sigma=0.1)
    b = tesu.render([5, 6, 7], seed=3, sigma=0.1)
    c = tesu.render([5, 6, 7], seed=4, sigma=0.1)
    assert a.shape == (12, 32)
    assert a.dtype == np.float32
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)


def test_config_hash_ignores_work_dir(tmp_path):
    cfg = json.loads(SMOKE.read_text())
    cfg["work_dir"] = "elsewhere"
    other = tmp_path / "other.json"
    other.write_text(json.dumps(cfg))
    assert tesu.config_hash(str(SMOKE)) == tesu.config_hash(str(other))
    assert len(tesu.config_hash(str(SMOKE))) == 16
    bad = tmp_path / "bad.json"
    bad.write_text('{"bogus": 1}')
    with pytest.raises(tesu.TesuError, match="config"):
        tesu.config_hash(str(bad))


def test_cli_errors(tmp_path):
    code, _, err = tesu.run_cli([])
    assert code == 2 and err.startswith("error[usage]")
    code, _, err = tesu.run_cli(["-c", str(SMOKE), "--work-dir", str(tmp_path), "pretrain"])
    assert code != 0 and err.startswith("error[dependency]")


def test_smoke_chain_and_stack(tmp_path):
    base = ["-c", str(SMOKE), "--work-dir", str(tmp_path)]
    for stage in (["gen-corpus"], ["train-unified"], ["train-lm"], ["pretrain"], ["sft"]):
        code, _, err = tesu.run_cli(base + stage)
        assert code == 0, err

    kind, tensors, config_hash = tesu.load_checkpoint(str(tmp_path / "checkpoints" / "projector.ckpt"))
    assert kind == "projector"
    assert config_hash == tesu.config_hash(str(SMOKE))
    assert all(isinstance(t, np.ndarray) for t in tensors.values())

    stack = tesu.Stack(str(SMOKE), work_dir=str(tmp_path))
    out = stack.infer_text("my hat falls")
    assert out == stack.infer_text("my hat falls")
    frames = stack.render("my hat falls", seed=2, sigma=0.0)
    assert frames.shape[1] == 32
    assert isinstance(stack.infer_frames(frames), str)
    res = stack.residual("my hat falls", seed=2, sigma=0.0)
    assert res["mse"] >= 0.0 and -1.0 <= res["mean_cosine"] <= 1.0
    score = stack.evaluate(["my hat falls"], path="speech", sigma=0.1)
    assert 0.0 <= score["exact_match"] <= 1.0
    assert math.isfinite(score["wer"])
    with pytest.raises(tesu.TesuError, match="dependency|io"):
        tesu.Stack(str(SMOKE), work_dir=str(tmp_path), control=True)
