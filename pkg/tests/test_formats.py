import struct
import zlib

import numpy as np
import pytest

from socialcvae import formats as F
from socialcvae.model import ModelConfig, init_params
from socialcvae.perception import FlowField, ImageFrame, SegmentationMap
from socialcvae.scene import generate_synthetic_scenes


def test_format_float():
    assert F.format_float(-0.0) == "0" and F.format_float(0.0) == "0"
    assert F.format_float(0.1) == "0.1"
    assert F.format_float(1.0 / 3.0) == "0.333333333"


def test_scene_jsonl_round_trip_is_byte_exact(tmp_path):
    scenes = generate_synthetic_scenes("fork", 10, 2)
    path = tmp_path / "s.jsonl"
    assert F.write_scenes(path, scenes) == 10
    text = path.read_bytes()
    assert text.count(b"\n") == 10
    back = F.read_scenes(path)
    assert [s.scene_id for s in back] == [s.scene_id for s in scenes]
    F.write_scenes(tmp_path / "t.jsonl", back)
    assert (tmp_path / "t.jsonl").read_bytes() == text


def test_read_scenes_reports_line(tmp_path):
    scenes = generate_synthetic_scenes("constant_velocity", 2, 0)
    path = tmp_path / "bad.jsonl"
    path.write_text(F.dumps_scene(scenes[0]) + "\n{not json\n")
    with pytest.raises(F.FormatError, match=r"bad.jsonl:2"):
        F.read_scenes(path)
    path.write_text(F.dumps_scene(scenes[0]) + "\n" + F.dumps_scene(scenes[0]) + "\n")
    with pytest.raises(F.FormatError, match="duplicate"):
        F.read_scenes(path)


def test_predictions_round_trip(tmp_path):
    preds = {"a": [np.array([[0.1, 0.2], [0.3, 0.4]])], "b": [np.zeros((2, 2)), np.ones((2, 2))]}
    F.write_predictions(tmp_path / "p.jsonl", preds)
    back = F.read_predictions(tmp_path / "p.jsonl")
    assert list(back) == ["a", "b"]
    assert all(np.array_equal(x, y) for k in preds for x, y in zip(preds[k], back[k]))


def test_env_features_round_trip(tmp_path):
    envs = {"a": np.array([0.5, 0.25, 0.25, 0, 0.1, -0.2, 0.3, 0.01])}
    F.write_env_features(tmp_path / "e.jsonl", envs)
    assert np.array_equal(F.read_env_features(tmp_path / "e.jsonl")["a"], envs["a"])


# -- checkpoints ---------------------------------------------------------------

def small_model():
    cfg = ModelConfig(tau=4, delta=3, d_node=4, d_y=5, d_z=2, d_hidden=6)
    return cfg, init_params(cfg, 3)


def test_checkpoint_round_trip_bit_exact(tmp_path):
    cfg, params = small_model()
    F.save_checkpoint(tmp_path / "m.ckpt", cfg, params, {"seed": 3})
    ck = F.load_checkpoint(tmp_path / "m.ckpt")
    assert ck.model == cfg and ck.snapshot == {"seed": 3}
    assert list(ck.params) == list(params)
    assert all(ck.params[k].data.tobytes() == params[k].data.tobytes() for k in params)
    assert F.pack_checkpoint(ck.model, ck.params, ck.snapshot) == (tmp_path / "m.ckpt").read_bytes()


def test_checkpoint_layout():
    cfg, params = small_model()
    data = F.pack_checkpoint(cfg, params)
    assert data[:8] == b"SCVAECKP"
    version, length = struct.unpack("<IQ", data[8:20])
    assert version == 1 and len(data) == 20 + length + 4
    assert struct.unpack("<I", data[-4:])[0] == zlib.crc32(data[20:-4])


@pytest.mark.parametrize("offset", [30, 200, -10])
def test_corrupted_checkpoint_detected(offset):
    cfg, params = small_model()
    data = bytearray(F.pack_checkpoint(cfg, params))
    data[offset] ^= 0x40
    with pytest.raises(F.ChecksumError):
        F.unpack_checkpoint(bytes(data))


def test_truncated_or_foreign_checkpoint():
    cfg, params = small_model()
    data = F.pack_checkpoint(cfg, params)
    with pytest.raises(F.FormatError):
        F.unpack_checkpoint(data[:-7])
    with pytest.raises(F.FormatError):
        F.unpack_checkpoint(b"NOTACKPT" + data[8:])


# -- grey maps and flow --------------------------------------------------------

def test_pgm_ascii_and_binary_round_trip():
    values = np.arange(12).reshape(3, 4) * 20
    for binary in (True, False):
        gm = F.parse_pgm(F.format_pgm(F.GreyMap(values, 255, ["hello world"]), binary))
        assert np.array_equal(gm.values, values) and gm.maxval == 255
        assert gm.comment_value("hello") == "world"


def test_pgm_sixteen_bit():
    values = np.array([[0, 1000], [65535, 300]])
    data = F.format_pgm(F.GreyMap(values, 65535))
    assert data.endswith(struct.pack(">4H", 0, 1000, 65535, 300))
    assert np.array_equal(F.parse_pgm(data).values, values)


def test_pgm_hand_written_ascii():
    gm = F.parse_pgm(b"P2\n# c\n3 2\n# inside\n9\n0 1 2\n3 4 9\n")
    assert gm.values.tolist() == [[0, 1, 2], [3, 4, 9]] and gm.maxval == 9


def test_pgm_errors():
    with pytest.raises(F.FormatError):
        F.parse_pgm(b"P6\n1 1\n255\n\x00")
    with pytest.raises(F.FormatError):
        F.parse_pgm(b"P5\n2 2\n255\n\x00")
    with pytest.raises(F.FormatError):
        F.parse_pgm(b"P2\n1 1\n5\n9\n")


def test_frame_and_segmentation_files(tmp_path):
    frame = ImageFrame(np.linspace(0, 1, 20).reshape(4, 5))
    F.write_frame(tmp_path / "f.pgm", frame)
    assert np.abs(F.read_frame(tmp_path / "f.pgm").intensities - frame.intensities).max() <= 0.5 / 255
    seg = SegmentationMap(np.array([[0, 1], [2, 3]]), 0.25)
    F.write_segmentation(tmp_path / "s.pgm", seg)
    back = F.read_segmentation(tmp_path / "s.pgm")
    assert np.array_equal(back.labels, seg.labels) and back.meters_per_pixel == 0.25
    F.write_frame(tmp_path / "nompp.pgm", frame)
    with pytest.raises(F.FormatError, match="meters_per_pixel"):
        F.read_segmentation(tmp_path / "nompp.pgm")


def test_flowgrid_layout_and_round_trip():
    u = np.arange(6.0).reshape(2, 3)
    v = -u
    data = F.pack_flow(FlowField(u, v))
    assert data[:8] == b"FLOWGRID" and struct.unpack("<II", data[8:16]) == (2, 3)
    assert struct.unpack("<6d", data[16:64]) == tuple(u.ravel())
    back = F.unpack_flow(data)
    assert np.array_equal(back.u, u) and np.array_equal(back.v, v)
    with pytest.raises(F.FormatError):
        F.unpack_flow(data[:-1])


# -- config ----------------------------------------------------------------------

def test_config_parses_with_comments(tmp_path):
    cfg = F.parse_config("# run\nscenes = s.jsonl\ncheckpoint = out/m.ckpt  # here\n\nepochs = 5\nbeta=0\n", tmp_path)
    assert cfg.scenes == tmp_path / "s.jsonl" and cfg.checkpoint == tmp_path / "out/m.ckpt"
    assert cfg.epochs == 5 and cfg.beta == 0.0 and cfg.learning_rate == 1e-3
    assert cfg.train_config().epochs == 5
    assert cfg.model_config(8, 12).tau == 8


@pytest.mark.parametrize("text, pattern", [
    ("scenes = a\ncheckpoint = b\nepochs = -3\n", r"line 3: key 'epochs'"),
    ("scenes = a\ncheckpoint = b\nlearnin_rate = 0.1\n", r"line 3: unknown key 'learnin_rate'"),
    ("scenes = a\nscenes = b\n", r"line 2: key 'scenes' repeated"),
    ("scenes = a\n", r"missing required key 'checkpoint'"),
    ("scenes a\n", r"line 1"),
    ("scenes = a\ncheckpoint = b\nbeta = nan\n", r"line 3: key 'beta'"),
])
def test_config_errors_name_key_and_line(text, pattern):
    with pytest.raises(F.ConfigError, match=pattern):
        F.parse_config(text)


def test_reports():
    assert F.loss_csv([1.0, 0.5]) == "epoch,loss\n1,1\n2,0.5\n"
    assert "min_ade = " in F.metrics_text({"min_ade": 0.25})
