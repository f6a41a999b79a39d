import json
import math
import os
import shutil
import subprocess

import pytest

import scen


def test_indexing_loss_matches_closed_form():
    got = scen.indexing_loss(0.9, [0.1, 0.3], alpha=0.7, beta=0.3, m=1.0)
    first = sum(math.exp(a + 0.7) for a in (0.1, 0.3)) / 2
    second = sum(math.exp(a - 0.9 + 0.3) for a in (0.1, 0.3)) / 2
    assert got == pytest.approx(math.exp(-0.9) + first + second, rel=1e-12)


def test_indexing_loss_without_negatives():
    assert scen.indexing_loss(1.0, []) == pytest.approx(math.exp(-1.0))


def test_indexing_loss_rejects_out_of_range():
    with pytest.raises(scen.ScenError):
        scen.indexing_loss(1.5, [])


def test_decide_strict_threshold_and_ties():
    assert scen.decide([0.2, 0.9, 0.9], 0.65)["chosen"] == 1
    assert scen.decide([0.65, 0.1], 0.65)["chosen"] is None
    assert scen.decide([], 0.65)["chosen"] is None


def test_synthetic_facts_are_deterministic():
    a = scen.gen_synthetic_facts(7, 10, 3)
    b = scen.gen_synthetic_facts(7, 10, 3)
    assert a == b
    assert len(a) == 10
    assert all(len(f["rewrites"]) == 3 for f in a)
    assert len({f["prompt"] for f in a}) == 10


def test_config_defaults_and_unknown_keys():
    cfg = json.loads(scen.normalize_config("{}"))
    assert cfg["scen"]["theta"] == pytest.approx(0.65)
    with pytest.raises(scen.ScenError, match="lrr"):
        scen.normalize_config('{"scen": {"expert": {"lrr": 1}}}')


@pytest.mark.skipif(shutil.which("scen") is None and not os.environ.get("SCEN_CLI"),
                    reason="scen CLI not available")
def test_checkpoint_and_kb_roundtrip(tmp_path):
    cli = os.environ.get("SCEN_CLI") or shutil.which("scen")
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "model": {"d_model": 16, "n_layers": 2, "n_heads": 2, "d_ffn": 32, "max_seq_len": 24},
        "train": {"steps": 200},
        "dataset": {"n_facts": 12, "n_edit": 2, "n_loc": 4},
        "scen": {"layer": 1},
    }))
    out = tmp_path / "out"
    subprocess.run([cli, "train-base", "-c", str(cfg), "-o", str(out)], check=True)
    subprocess.run([cli, "edit", "-c", str(cfg), "-o", str(out), "--checkpoint", str(out / "base.ckpt"),
                    "--dataset", str(out / "edit.jsonl")], check=True)
    ck = scen.Checkpoint.load(str(out / "base.ckpt"))
    kb = scen.KnowledgeBase.load(str(out / "kb.scenkb"), ck)
    assert kb.experts == 2
    assert kb.layer == 1
    edits = [json.loads(line) for line in (out / "edit.jsonl").read_text().splitlines()]
    answer, routing = kb.generate(ck, edits[0]["prompt"])
    assert routing["chosen"] == 0
    assert answer == edits[0]["answer"]
    assert len(ck.fnn_input(edits[0]["prompt"], 1)) == ck.d_ffn
