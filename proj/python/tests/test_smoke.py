import math

import numpy as np
import pytest

import hybridlab as hl


def test_presets_listed():
    names = hl.preset_names()
    assert "llama-1b" in names and "toy-intra" in names


def test_plan_scatter():
    layout = hl.plan(13, "1:5", "attn", "scatter")
    assert layout["specials"] == [3, 8]
    assert layout["blocks"].count("mamba") == 11
    assert not [lvl for lvl, _ in layout["lints"] if lvl == "warning"]
    assert hl.plan_counts(1, 12, "attn", "front")["lints"][0][0] == "warning"


def test_plan_rejects_bad_ratio():
    with pytest.raises(ValueError):
        hl.plan(3, "1:12")


def test_cost_cache_golden():
    assert hl.cost("llama-1b", 8192)["cache_bytes"] == 268435456
    assert hl.cost("mamba-1b", 8192)["cache_mib"] == pytest.approx(13.43, abs=0.005)


def test_decode_trace_mamba_constant():
    rows = hl.decode_trace("mamba-1b", 8, 5)
    assert len(rows) == 5
    assert len({(ops, state) for _, ops, state in rows}) == 1


def test_model_forward_and_generate():
    model = hl.Model("toy-inter", seed=1)
    logits = model.forward([1, 2, 3, 4])
    assert isinstance(logits, np.ndarray)
    assert logits.shape == (4, model.vocab)
    assert np.all(np.isfinite(logits))
    out = model.generate([1, 2, 3], 4)
    assert len(out) == 4
    assert out[0] == int(np.argmax(logits[2]))


def test_model_checkpoint_round_trip(tmp_path):
    model = hl.Model("toy-mamba", seed=2)
    path = str(tmp_path / "m.ckpt")
    model.save(path)
    back = hl.Model.load(path)
    assert back.parameter_count() == model.parameter_count()
    np.testing.assert_array_equal(back.forward([5, 6, 7]), model.forward([5, 6, 7]))


def test_training_reduces_loss():
    model = hl.Model("toy-llama", seed=0)
    rows = model.train_copy(steps=200, seq_len=16, batch=4, lr=3e-3, seed=3)
    assert len(rows) == 200
    losses = [r[2] for r in rows]
    assert all(math.isfinite(v) for v in losses)
    assert sum(losses[-10:]) / 10 < sum(losses[:10]) / 10 - 0.2


def test_bad_token_raises():
    with pytest.raises(ValueError):
        hl.Model("toy-llama").forward([10**6])


def test_verify_suite_passes():
    results = hl.verify(["layout"])
    assert results and all(passed for _, _, passed, _ in results)
