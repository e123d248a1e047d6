import json
import subprocess
import sys
import xml.etree.ElementTree as ET

import pytest

from socialcvae import formats
from socialcvae.cli import main


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture
def fork_file(tmp_path):
    path = tmp_path / "fork.jsonl"
    assert run("gen", "fork", "--count", 4, "--seed", 1, "--out", path) == 0
    return path


def write_config(tmp_path, scenes, **extra):
    body = {"scenes": scenes, "checkpoint": tmp_path / "m.ckpt", "epochs": 1,
            "d_node": 4, "d_y": 4, "d_hidden": 8} | extra
    cfg = tmp_path / "run.cfg"
    cfg.write_text("".join(f"{k} = {v}\n" for k, v in body.items()))
    return cfg


def test_gen_count_and_determinism(tmp_path):
    a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
    assert run("gen", "fork", "--count", 100, "--seed", 7, "--out", a) == 0
    assert run("gen", "fork", "--count", 100, "--seed", 7, "--out", b) == 0
    assert len(a.read_text().splitlines()) == 100
    assert a.read_bytes() == b.read_bytes()


def test_gen_unknown_spec(tmp_path, capsys):
    assert run("gen", "spiral", "--out", tmp_path / "x.jsonl") != 0
    assert "unknown scenario" in capsys.readouterr().err
    assert not (tmp_path / "x.jsonl").exists()


def test_train_writes_checkpoint_and_csv(tmp_path, fork_file):
    cfg = write_config(tmp_path, fork_file)
    assert run("train", cfg) == 0
    rows = (tmp_path / "m.loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,loss" and len(rows) == 2
    first = (tmp_path / "m.loss.csv").read_bytes()
    ckpt = (tmp_path / "m.ckpt").read_bytes()
    assert run("train", cfg) == 0
    assert (tmp_path / "m.loss.csv").read_bytes() == first
    assert (tmp_path / "m.ckpt").read_bytes() == ckpt
    assert formats.load_checkpoint(tmp_path / "m.ckpt").model.d_y == 4


def test_train_missing_scene_file(tmp_path, capsys):
    cfg = write_config(tmp_path, tmp_path / "nope.jsonl")
    assert run("train", cfg) == 2
    assert "nope.jsonl" in capsys.readouterr().err
    assert not (tmp_path / "m.ckpt").exists()


def test_train_bad_config_names_key(tmp_path, fork_file, capsys):
    cfg = write_config(tmp_path, fork_file, epochs="many")
    assert run("train", cfg) == 2
    err = capsys.readouterr().err
    assert "epochs" in err and "line 3" in err


def trained(tmp_path, fork_file):
    assert run("train", write_config(tmp_path, fork_file)) == 0
    return tmp_path / "m.ckpt"


def test_predict_k1(tmp_path, fork_file):
    ckpt = trained(tmp_path, fork_file)
    out = tmp_path / "p.jsonl"
    assert run("predict", "--scenes", fork_file, "--checkpoint", ckpt, "--k", 1, "--out", out) == 0
    preds = formats.read_predictions(out)
    assert len(preds) == 4 and all(len(v) == 1 and v[0].shape == (12, 2) for v in preds.values())
    again = tmp_path / "q.jsonl"
    run("predict", "--scenes", fork_file, "--checkpoint", ckpt, "--k", 1, "--out", again)
    assert out.read_bytes() == again.read_bytes()


def test_predict_rejects_corrupted_checkpoint(tmp_path, fork_file, capsys):
    ckpt = trained(tmp_path, fork_file)
    data = bytearray(ckpt.read_bytes())
    data[100] ^= 0xFF
    ckpt.write_bytes(bytes(data))
    out = tmp_path / "p.jsonl"
    assert run("predict", "--scenes", fork_file, "--checkpoint", ckpt, "--out", out) == 2
    assert "checksum" in capsys.readouterr().err
    assert not out.exists()


def test_predict_rejects_bad_k(tmp_path, fork_file):
    ckpt = trained(tmp_path, fork_file)
    assert run("predict", "--scenes", fork_file, "--checkpoint", ckpt, "--k", 0, "--out", tmp_path / "p") == 2


def test_eval_oracle_predictions(tmp_path, fork_file, capsys):
    scenes = formats.read_scenes(fork_file)
    oracle = tmp_path / "oracle.jsonl"
    formats.write_predictions(oracle, {s.scene_id: [s.target.as_array()[s.tau:]] for s in scenes})
    out = tmp_path / "m.json"
    assert run("eval", "--scenes", fork_file, "--predictions", oracle, "--out-json", out) == 0
    metrics = json.loads(out.read_text())
    assert metrics["min_ade"] == 0.0 and metrics["min_fde"] == 0.0 and metrics["n_scenes"] == 4
    assert "min_ade = 0" in capsys.readouterr().out


def test_eval_from_checkpoint(tmp_path, fork_file):
    ckpt = trained(tmp_path, fork_file)
    out = tmp_path / "m.txt"
    assert run("eval", "--scenes", fork_file, "--checkpoint", ckpt, "--k", 3, "--out-text", out) == 0
    assert "mode_coverage = " in out.read_text()


def test_eval_needs_a_source(tmp_path, fork_file):
    assert run("eval", "--scenes", fork_file) == 2


def test_plot_is_valid_deterministic_svg(tmp_path, fork_file):
    ckpt = trained(tmp_path, fork_file)
    preds = tmp_path / "p.jsonl"
    run("predict", "--scenes", fork_file, "--checkpoint", ckpt, "--k", 5, "--out", preds)
    a, b = tmp_path / "a.svg", tmp_path / "b.svg"
    assert run("plot", "--scenes", fork_file, "--predictions", preds, "--out", a) == 0
    assert run("plot", "--scenes", fork_file, "--predictions", preds, "--out", b) == 0
    assert a.read_bytes() == b.read_bytes()
    root = ET.parse(a).getroot()
    assert root.tag.endswith("svg")


def test_plot_without_predictions_draws_fewer_paths(tmp_path, fork_file):
    plain, full = tmp_path / "plain.svg", tmp_path / "full.svg"
    scenes = formats.read_scenes(fork_file)
    preds = tmp_path / "p.jsonl"
    formats.write_predictions(preds, {s.scene_id: [s.target.as_array()[s.tau:]] * 3 for s in scenes})
    assert run("plot", "--scenes", fork_file, "--out", plain) == 0
    assert run("plot", "--scenes", fork_file, "--predictions", preds, "--out", full) == 0

    def lines(p):
        return [e for e in ET.parse(p).getroot().iter() if e.tag.endswith("polyline")]

    assert len(lines(full)) == len(lines(plain)) + 3


def test_plot_unknown_scene(tmp_path, fork_file):
    assert run("plot", "--scenes", fork_file, "--scene-id", "nope", "--out", tmp_path / "x.svg") == 2


def test_preprocess_with_rendered_imagery(tmp_path):
    scenes = tmp_path / "s.jsonl"
    assert run("gen", "constant_velocity", "--count", 2, "--seed", 3, "--tau", 3, "--delta", 2,
               "--out", scenes, "--render-dir", tmp_path / "img") == 0
    env = tmp_path / "env.jsonl"
    assert run("preprocess", "--scenes", scenes, "--out", env, "--iterations", 5,
               "--flow-dir", tmp_path / "flow") == 0
    feats = formats.read_env_features(env)
    assert len(feats) == 2 and all(abs(v[:4].sum() - 1) < 1e-9 for v in feats.values())
    flows = sorted((tmp_path / "flow").iterdir())
    assert len(flows) == 4 and flows[0].read_bytes()[:8] == b"FLOWGRID"


def test_preprocess_missing_frame(tmp_path, capsys):
    scenes = tmp_path / "s.jsonl"
    run("gen", "constant_velocity", "--count", 1, "--tau", 3, "--delta", 2, "--out", scenes,
        "--render-dir", tmp_path / "img")
    next((tmp_path / "img").glob("*_t01.pgm")).unlink()
    assert run("preprocess", "--scenes", scenes, "--out", tmp_path / "env.jsonl") == 2
    assert not (tmp_path / "env.jsonl").exists()


def test_module_entry_point(tmp_path):
    out = tmp_path / "s.jsonl"
    proc = subprocess.run([sys.executable, "-m", "socialcvae", "gen", "avoidance", "--count", "2", "--out", str(out)],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert len(out.read_text().splitlines()) == 2
