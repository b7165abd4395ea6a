import csv
import json

import numpy as np
import pytest
from PIL import Image

from fgsa import cli
from fgsa.config import load_config
from fgsa.model import ForwardTrace
from fgsa.serialize import checkpoint_bytes, parse_checkpoint
from fgsa.train import (ADAPTER_CKPT, CheckpointError, build_model, load_run, load_samples,
                        predict, train)
from fgsa.viz import render

MICRO_INI = """
[backbone]
image_size = 32
patch_size = 4
embed_dim = 16
depth = 2
heads = 2
group_count = 2
layers_per_group = 1
mlp_ratio = 2
[adapter]
D = 16
heads = 2
ffn_mult = 2
stem_channels = 4
[train]
max_steps = 3
epochs = 2
[data]
n_train = 4
n_test = 2
[out]
dir = run
"""


@pytest.fixture
def micro_ini(tmp_path):
    p = tmp_path / "micro.ini"
    p.write_text(MICRO_INI)
    return p


def run(argv, capsys=None):
    code = cli.main([str(a) for a in argv])
    out = capsys.readouterr() if capsys else None
    return code, out


def test_gen_data_layout(tmp_path, capsys):
    code, _ = run(["gen-data", "--out", tmp_path / "d", "--n", 4, "--size", 32, "--seed", 3,
                   "--contrast", 0.0], capsys)
    assert code == 0
    for split, n in (("train", 4), ("test", 2)):
        assert len(list((tmp_path / "d" / split / "images").glob("*.png"))) == n
        assert len(list((tmp_path / "d" / split / "masks").glob("*.png"))) == n


def test_eval_directories_and_oracle(tmp_path, capsys):
    run(["gen-data", "--out", tmp_path / "d", "--n", 4, "--size", 32], capsys)
    gt = tmp_path / "d" / "test" / "masks"
    code, out = run(["eval", "--pred", gt, "--gt", gt, "--report", tmp_path / "r.json"], capsys)
    assert code == 0
    rep = json.loads((tmp_path / "r.json").read_text())
    assert set(rep) == {"s_alpha", "e_phi", "f_w_beta", "mae", "n_samples"}
    assert rep["mae"] == 0 and rep["n_samples"] == 2
    for k in ("s_alpha", "e_phi", "f_w_beta"):
        assert rep[k] == pytest.approx(1.0, abs=1e-6)
    code, _ = run(["eval", "--gt", gt, "--oracle", "--report", tmp_path / "o.json"], capsys)
    assert code == 0 and json.loads((tmp_path / "o.json").read_text()) == rep


def test_eval_directory_errors(tmp_path, capsys):
    run(["gen-data", "--out", tmp_path / "d", "--n", 2, "--size", 32], capsys)
    gt = tmp_path / "d" / "train" / "masks"
    preds = tmp_path / "p"
    preds.mkdir()
    Image.fromarray(np.zeros((32, 32), np.uint8)).save(preds / "train_0000.png")
    code, out = run(["eval", "--pred", preds, "--gt", gt], capsys)
    assert code == 1 and "train_0001" in out.err
    assert run(["eval", "--pred", tmp_path / "nope", "--gt", gt], capsys)[0] == 1
    assert run(["eval", "--gt", gt], capsys)[0] == 1


def test_train_eval_dump_cycle(micro_ini, tmp_path, capsys):
    code, out = run(["train", "--config", micro_ini], capsys)
    assert code == 0
    assert "loss" in out.out and "trainable parameters" in out.out
    rundir = tmp_path / "run"
    summary = json.loads((rundir / "summary.json").read_text())
    assert summary["backbone_sha256_before"] == summary["backbone_sha256_after"]
    assert summary["steps"] == 3
    assert 0 < summary["tunable_fraction_total"] < 1
    rows = list(csv.DictReader(open(rundir / "train_log.csv")))
    assert [r["epoch"] for r in rows] == ["1", "2"]  # second epoch stops early at the step cap

    # only trainable tensors plus the backbone hash go into the adapter checkpoint
    recs = parse_checkpoint((rundir / ADAPTER_CKPT).read_bytes())
    assert all(flag for name, _, flag in recs if not name.startswith("meta."))
    assert not any(name.startswith("backbone.") for name, _, _ in recs)

    code, out = run(["eval", "--config", micro_ini], capsys)
    assert code == 0
    rep = json.loads((rundir / "report_test.json").read_text())
    assert rep["n_samples"] == 2
    assert len(list((rundir / "pred_test").glob("*.png"))) == 2

    code, out = run(["dump", "--config", micro_ini, "--index", 1], capsys)
    assert code == 0
    files = sorted((rundir / "dump" / "test_0001").glob("*.png"))
    n_fgsattn = 3 + 2  # FBNM levels + FBFE groups
    assert len(files) == n_fgsattn + 1 + 3
    sizes = {f.stem: Image.open(f).size for f in files}
    assert sizes["fbnm_level1_attn"] == (4, 4) and sizes["fbnm_level3_attn"] == (1, 1)
    assert sizes["fbfe_group1_attn"] == (8, 8) and sizes["prediction"] == (32, 32)
    assert sizes["energy_level2"] == (2, 2)


def test_dump_identity_model_matches_minmax_of_pooled_map(micro_ini, tmp_path, capsys):
    code, _ = run(["dump", "--config", micro_ini, "--untrained", "--out", tmp_path / "dd"], capsys)
    assert code == 0
    cfg = load_config(micro_ini)
    model = build_model(cfg)
    sample = load_samples(cfg, "test")[0]
    trace = ForwardTrace([], [])
    model.features(sample.image, trace)
    fg = trace.fbnm[0]["f_g"].data
    expected = render((fg - fg.min()) / (fg.max() - fg.min()))
    got = np.asarray(Image.open(tmp_path / "dd" / "fbnm_level1_attn.png"))
    assert np.array_equal(got, expected)


def test_checkpoint_mismatches_are_rejected(micro_ini, tmp_path, capsys):
    run(["train", "--config", micro_ini], capsys)
    cfg = load_config(micro_ini)
    rundir = tmp_path / "run"
    model = load_run(cfg, rundir)
    fresh = build_model(cfg)
    img = load_samples(cfg, "test")[0].image
    assert not np.array_equal(predict(model, img), predict(fresh, img))

    recs = parse_checkpoint((rundir / ADAPTER_CKPT).read_bytes())
    tampered = [(n, t, f) for n, t, f in recs]
    name, t, f = tampered[-1]
    t.data[0] = (t.data[0] + 1) % 256
    (tmp_path / "bad.ckpt").write_bytes(checkpoint_bytes(tampered))
    (tmp_path / "backbone.ckpt").write_bytes((rundir / "backbone.ckpt").read_bytes())
    with pytest.raises(CheckpointError, match="hash"):
        load_run(cfg, rundir, tmp_path / "bad.ckpt")
    wide = cfg.with_values("adapter", ffn_mult=3)
    with pytest.raises(CheckpointError):
        load_run(wide, rundir)
    code, out = run(["eval", "--config", micro_ini, "--checkpoint", tmp_path / "missing.ckpt"], capsys)
    assert code == 1 and "not found" in out.err


def test_training_is_deterministic(micro_ini):
    cfg = load_config(micro_ini)
    samples = load_samples(cfg, "train")
    a = train(build_model(cfg), samples, cfg.train).step_losses
    b = train(build_model(cfg), samples, cfg.train).step_losses
    assert a == b and len(a) == 3


def test_gradcheck_command(capsys):
    code, out = run(["gradcheck", "--seeds", 1, "--only", "fgsattn", "minmax"], capsys)
    assert code == 0 and "fgsattn" in out.out and "max_rel_error" in out.out
    assert run(["gradcheck", "--only", "nonexistent"], capsys)[0] == 1


def test_sweep_d(micro_ini, tmp_path, capsys):
    out1, out2 = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(["sweep", "--config", micro_ini, "--param", "d", "--values", 1, 2, 4,
                "--out", out1, "--max-steps", 1], capsys)[0] == 0
    run(["sweep", "--config", micro_ini, "--param", "d", "--values", 1, 2, 4,
         "--out", out2, "--max-steps", 1], capsys)
    rows = list(csv.DictReader(open(out1)))
    assert [r["param_value"] for r in rows] == ["1", "2", "4"]
    assert list(rows[0]) == ["param_value", "s_alpha", "e_phi", "f_w_beta", "mae"]
    assert out1.read_bytes() == out2.read_bytes()


def test_sweep_rejects_bad_grouping(micro_ini, tmp_path, capsys):
    code, out = run(["sweep", "--config", micro_ini, "--param", "K", "--values", 3,
                     "--out", tmp_path / "x.csv"], capsys)
    assert code == 1 and "depth" in out.err
    assert not (tmp_path / "x.csv").exists()


def test_exit_codes(tmp_path, capsys, monkeypatch):
    assert run(["train", "--config", tmp_path / "missing.ini"], capsys)[0] == 1
    assert run(["nonsense"], capsys)[0] == 1

    def boom(args):
        raise RuntimeError("disk on fire")
    monkeypatch.setattr(cli, "cmd_gen_data", boom)
    code, out = run(["gen-data"], capsys)
    assert code == 2 and "disk on fire" in out.err
