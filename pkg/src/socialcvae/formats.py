"""On-disk formats: scene/prediction JSON lines, grey maps, flow grids, configs, checkpoints.

Scene lines use a canonical encoding (fixed key order, floats with 9
significant digits) so that parse -> serialize reproduces the input bytes.
"""
from __future__ import annotations

import json
import math
import re
import struct
import zlib
from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .model import ModelConfig, param_shapes
from .perception import FlowField, ImageFrame, SegmentationMap
from .scene import AgentTrack, Scene, SceneError
from .tensor import Tensor
from .train import TrainConfig


class FormatError(ValueError):
    pass


class ConfigError(ValueError):
    pass


class ChecksumError(FormatError):
    pass


# -- canonical JSON ---------------------------------------------------------

def format_float(v: float) -> str:
    if not math.isfinite(v):
        raise FormatError(f"cannot encode non-finite number {v!r}")
    if v == 0:
        return "0"
    return format(v, ".9g")


def canonical_json(value: Any) -> str:
    """Compact JSON with floats pinned to 9 significant digits; dict order is kept."""
    if value is None:
        return "null"
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return format_float(float(value))
    if isinstance(value, str):
        return json.dumps(value)
    if isinstance(value, Mapping):
        return "{" + ",".join(json.dumps(str(k)) + ":" + canonical_json(v) for k, v in value.items()) + "}"
    if isinstance(value, (list, tuple, np.ndarray)):
        return "[" + ",".join(canonical_json(v) for v in value) + "]"
    raise FormatError(f"cannot encode value of type {type(value).__name__}")


def _sorted_meta(value: Any) -> Any:
    if isinstance(value, Mapping):
        return {k: _sorted_meta(value[k]) for k in sorted(value)}
    if isinstance(value, (list, tuple)):
        return [_sorted_meta(v) for v in value]
    return value


# -- scenes -----------------------------------------------------------------

def scene_to_dict(scene: Scene) -> dict:
    d = {
        "scene_id": scene.scene_id,
        "tau": scene.tau,
        "delta": scene.delta,
        "target_index": scene.target_index,
        "tracks": [{"agent_id": t.agent_id, "agent_class": t.agent_class.value,
                    "points": [[p.x, p.y] for p in t.points]} for t in scene.tracks],
    }
    if scene.frames is not None:
        d["frames"] = list(scene.frames)
    if scene.seg_map is not None:
        d["seg_map"] = scene.seg_map
    d["metadata"] = _sorted_meta(scene.metadata)
    return d


def scene_from_dict(d: Mapping) -> Scene:
    try:
        tracks = tuple(
            AgentTrack.from_array(int(t["agent_id"]), t["agent_class"], np.asarray(t["points"], dtype=np.float64))
            for t in d["tracks"])
        frames = d.get("frames")
        return Scene(
            scene_id=str(d["scene_id"]),
            tracks=tracks,
            tau=int(d["tau"]),
            delta=int(d["delta"]),
            target_index=int(d.get("target_index", 0)),
            frames=tuple(frames) if frames is not None else None,
            seg_map=d.get("seg_map"),
            metadata=dict(d.get("metadata", {})),
        )
    except KeyError as e:
        raise FormatError(f"scene record missing field {e.args[0]!r}") from None
    except (TypeError, ValueError) as e:
        if isinstance(e, SceneError):
            raise
        raise FormatError(f"malformed scene record: {e}") from None


def dumps_scene(scene: Scene) -> str:
    return canonical_json(scene_to_dict(scene))


def write_scenes(path, scenes: Iterable[Scene]) -> int:
    lines = [dumps_scene(s) + "\n" for s in scenes]
    Path(path).write_text("".join(lines), encoding="utf-8")
    return len(lines)


def read_scenes(path) -> list[Scene]:
    path = Path(path)
    scenes = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                scenes.append(scene_from_dict(json.loads(line)))
            except json.JSONDecodeError as e:
                raise FormatError(f"{path}:{lineno}: invalid JSON: {e.msg}") from None
            except (FormatError, SceneError) as e:
                raise FormatError(f"{path}:{lineno}: {e}") from None
    if not scenes:
        raise FormatError(f"{path}: no scenes")
    ids = [s.scene_id for s in scenes]
    if len(set(ids)) != len(ids):
        raise FormatError(f"{path}: duplicate scene ids")
    return scenes


# -- predictions and env features ---------------------------------------------

def write_predictions(path, predictions: Mapping[str, Sequence[np.ndarray]]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sid, samples in predictions.items():
            fh.write(canonical_json({"scene_id": sid, "samples": [np.asarray(s).tolist() for s in samples]}) + "\n")


def read_predictions(path) -> dict[str, list[np.ndarray]]:
    out = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                samples = [np.asarray(s, dtype=np.float64).reshape(-1, 2) for s in rec["samples"]]
                out[str(rec["scene_id"])] = samples
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}:{lineno}: malformed prediction record ({e})") from None
    return out


def write_env_features(path, envs: Mapping[str, np.ndarray]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for sid, env in envs.items():
            fh.write(canonical_json({"scene_id": sid, "env": np.asarray(env).tolist()}) + "\n")


def read_env_features(path) -> dict[str, np.ndarray]:
    out = {}
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                env = np.asarray(rec["env"], dtype=np.float64)
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
                raise FormatError(f"{path}:{lineno}: malformed env record ({e})") from None
            if env.shape != (8,) or not np.all(np.isfinite(env)):
                raise FormatError(f"{path}:{lineno}: env feature must be 8 finite values")
            out[str(rec["scene_id"])] = env
    return out


# -- grey maps ---------------------------------------------------------------

@dataclass
class GreyMap:
    values: np.ndarray  # raw integer samples
    maxval: int
    comments: list[str] = field(default_factory=list)

    def comment_value(self, key: str) -> str | None:
        for c in self.comments:
            parts = c.split(None, 1)
            if len(parts) == 2 and parts[0] == key:
                return parts[1].strip()
        return None


def _pgm_tokens(data: bytes, count: int, comments: list[str]) -> tuple[list[bytes], int]:
    """First ``count`` header tokens, skipping ``#`` comments; returns tokens and the offset after them."""
    tokens, i, n = [], 0, len(data)
    while len(tokens) < count:
        while i < n and data[i:i + 1].isspace():
            i += 1
        if i >= n:
            raise FormatError("truncated grey-map header")
        if data[i:i + 1] == b"#":
            j = data.find(b"\n", i)
            j = n if j < 0 else j
            comments.append(data[i + 1:j].decode("ascii", "replace").strip())
            i = j
            continue
        j = i
        while j < n and not data[j:j + 1].isspace() and data[j:j + 1] != b"#":
            j += 1
        tokens.append(data[i:j])
        i = j
    return tokens, i


def parse_pgm(data: bytes) -> GreyMap:
    comments: list[str] = []
    tokens, pos = _pgm_tokens(data, 4, comments)
    magic = tokens[0]
    if magic not in (b"P2", b"P5"):
        raise FormatError(f"not a grey map (magic {magic!r})")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError:
        raise FormatError("non-integer grey-map dimensions") from None
    if width < 1 or height < 1 or not 1 <= maxval <= 65535:
        raise FormatError(f"invalid grey-map header {width}x{height} maxval {maxval}")
    if magic == b"P5":
        pos += 1  # single whitespace byte before the raster
        dtype = np.dtype(">u2") if maxval > 255 else np.dtype("u1")
        need = width * height * dtype.itemsize
        raw = data[pos:pos + need]
        if len(raw) != need:
            raise FormatError("truncated grey-map raster")
        values = np.frombuffer(raw, dtype=dtype).astype(np.int64).reshape(height, width)
    else:
        body = re.sub(rb"#[^\n]*", b"", data[pos:]).split()
        if len(body) < width * height:
            raise FormatError("truncated grey-map raster")
        values = np.array([int(t) for t in body[:width * height]], dtype=np.int64).reshape(height, width)
    if values.max() > maxval or values.min() < 0:
        raise FormatError("grey-map sample exceeds maxval")
    return GreyMap(values, maxval, comments)


def format_pgm(gm: GreyMap, binary: bool = True) -> bytes:
    h, w = gm.values.shape
    header = [b"P5" if binary else b"P2"]
    header += [b"# " + c.encode("ascii") for c in gm.comments]
    header += [f"{w} {h}".encode(), str(gm.maxval).encode()]
    head = b"\n".join(header) + b"\n"
    if binary:
        dtype = np.dtype(">u2") if gm.maxval > 255 else np.dtype("u1")
        return head + gm.values.astype(dtype).tobytes()
    rows = [" ".join(str(int(v)) for v in row) for row in gm.values]
    return head + ("\n".join(rows) + "\n").encode()


def read_frame(path) -> ImageFrame:
    gm = parse_pgm(Path(path).read_bytes())
    return ImageFrame(gm.values / gm.maxval)


def frame_to_pgm(frame: ImageFrame, maxval: int = 255) -> bytes:
    return format_pgm(GreyMap(np.rint(frame.intensities * maxval).astype(np.int64), maxval))


def write_frame(path, frame: ImageFrame, maxval: int = 255) -> None:
    Path(path).write_bytes(frame_to_pgm(frame, maxval))


def read_segmentation(path) -> SegmentationMap:
    gm = parse_pgm(Path(path).read_bytes())
    mpp = gm.comment_value("meters_per_pixel")
    if mpp is None:
        raise FormatError(f"{path}: segmentation map lacks a 'meters_per_pixel' comment")
    return SegmentationMap(gm.values, float(mpp))


def segmentation_to_pgm(seg: SegmentationMap) -> bytes:
    return format_pgm(GreyMap(seg.labels, 255, [f"meters_per_pixel {format_float(seg.meters_per_pixel)}"]))


def write_segmentation(path, seg: SegmentationMap) -> None:
    Path(path).write_bytes(segmentation_to_pgm(seg))


# -- flow grids --------------------------------------------------------------

FLOW_MAGIC = b"FLOWGRID"


def pack_flow(flow: FlowField) -> bytes:
    h, w = flow.u.shape
    return (FLOW_MAGIC + struct.pack("<II", h, w)
            + flow.u.astype("<f8").tobytes() + flow.v.astype("<f8").tobytes())


def unpack_flow(data: bytes) -> FlowField:
    if data[:8] != FLOW_MAGIC:
        raise FormatError("not a flow grid (bad magic)")
    if len(data) < 16:
        raise FormatError("truncated flow grid header")
    h, w = struct.unpack("<II", data[8:16])
    n = h * w * 8
    if len(data) != 16 + 2 * n:
        raise FormatError(f"flow grid payload is {len(data) - 16} bytes, expected {2 * n}")
    u = np.frombuffer(data[16:16 + n], dtype="<f8").reshape(h, w)
    v = np.frombuffer(data[16 + n:], dtype="<f8").reshape(h, w)
    return FlowField(u.astype(np.float64), v.astype(np.float64))


# -- run configuration ---------------------------------------------------------

def _pos_int(s):
    v = int(s)
    if v < 1:
        raise ValueError
    return v


def _pos_float(s):
    v = float(s)
    if not (math.isfinite(v) and v > 0):
        raise ValueError
    return v


def _nonneg_float(s):
    v = float(s)
    if not (math.isfinite(v) and v >= 0):
        raise ValueError
    return v


_KINDS = {_pos_int: "a positive integer", _pos_float: "a positive real", _nonneg_float: "a non-negative real",
          int: "an integer", str: "a string", Path: "a path"}


@dataclass(frozen=True)
class RunConfig:
    scenes: Path
    checkpoint: Path
    loss_csv: Path | None = None
    env_features: Path | None = None
    learning_rate: float = 1e-3
    epochs: int = 100
    beta: float = 0.1
    k_samples: int = 20
    seed: int = 0
    d_node: int = 32
    d_y: int = 32
    d_z: int = 2
    d_hidden: int = 64
    rounds: int = 2
    radius_m: float = 10.0
    pool_radius_m: float = 2.0
    flow_alpha: float = 0.1
    flow_iterations: int = 200

    def train_config(self) -> TrainConfig:
        return TrainConfig(learning_rate=self.learning_rate, epochs=self.epochs, beta=self.beta,
                           k_samples=self.k_samples, seed=self.seed)

    def model_config(self, tau: int, delta: int) -> ModelConfig:
        return ModelConfig(tau=tau, delta=delta, d_node=self.d_node, d_y=self.d_y, d_z=self.d_z,
                           d_hidden=self.d_hidden, rounds=self.rounds, radius_m=self.radius_m)


_CONFIG_TYPES = {
    "scenes": Path, "checkpoint": Path, "loss_csv": Path, "env_features": Path,
    "learning_rate": _nonneg_float, "epochs": _pos_int, "beta": _nonneg_float, "k_samples": _pos_int,
    "seed": int, "d_node": _pos_int, "d_y": _pos_int, "d_z": _pos_int, "d_hidden": _pos_int,
    "rounds": _pos_int, "radius_m": _pos_float, "pool_radius_m": _pos_float, "flow_alpha": _pos_float,
    "flow_iterations": _pos_int,
}
assert set(_CONFIG_TYPES) == {f.name for f in fields(RunConfig)}


def parse_config(text: str, base_dir=None) -> RunConfig:
    """Parse flat ``key = value`` lines (``#`` starts a comment).

    Relative paths resolve against ``base_dir``.  Errors name the key and line.
    """
    base = Path(base_dir) if base_dir is not None else None
    values: dict[str, Any] = {}
    lines: dict[str, int] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CONFIG_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: key {key!r} repeated (first set on line {lines[key]})")
        conv = _CONFIG_TYPES[key]
        try:
            if not value:
                raise ValueError
            parsed = conv(value)
        except ValueError:
            raise ConfigError(f"line {lineno}: key {key!r} expects {_KINDS[conv]}, got {value!r}") from None
        if conv is Path and base is not None and not parsed.is_absolute():
            parsed = base / parsed
        values[key] = parsed
        lines[key] = lineno
    for key in ("scenes", "checkpoint"):
        if key not in values:
            raise ConfigError(f"missing required key {key!r}")
    return RunConfig(**values)


def load_config(path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e.strerror}") from None
    try:
        return parse_config(text, path.parent)
    except ConfigError as e:
        raise ConfigError(f"{path}: {e}") from None


# -- checkpoints ---------------------------------------------------------------

CKPT_MAGIC = b"SCVAECKP"
CKPT_VERSION = 1


@dataclass
class Checkpoint:
    model: ModelConfig
    params: dict[str, Tensor]
    snapshot: dict = field(default_factory=dict)


def pack_checkpoint(model: ModelConfig, params: Mapping[str, Tensor], snapshot: Mapping | None = None) -> bytes:
    """Binary checkpoint: magic, version, length-prefixed payload, CRC-32 of the payload."""
    meta = canonical_json({"model": model.to_dict(), "config": dict(snapshot or {})}).encode()
    chunks = [struct.pack("<I", len(meta)), meta, struct.pack("<I", len(params))]
    for name, p in params.items():
        nb = name.encode()
        chunks.append(struct.pack("<H", len(nb)) + nb + struct.pack("<B", p.data.ndim))
        chunks.append(struct.pack(f"<{p.data.ndim}I", *p.shape))
        chunks.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    payload = b"".join(chunks)
    return (CKPT_MAGIC + struct.pack("<IQ", CKPT_VERSION, len(payload)) + payload
            + struct.pack("<I", zlib.crc32(payload)))


def unpack_checkpoint(data: bytes) -> Checkpoint:
    if data[:8] != CKPT_MAGIC:
        raise FormatError("not a checkpoint (bad magic)")
    if len(data) < 20:
        raise FormatError("truncated checkpoint header")
    version, length = struct.unpack("<IQ", data[8:20])
    if version != CKPT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}")
    payload = data[20:20 + length]
    tail = data[20 + length:]
    if len(payload) != length or len(tail) != 4:
        raise FormatError("checkpoint length does not match its header")
    if struct.unpack("<I", tail)[0] != zlib.crc32(payload):
        raise ChecksumError("checkpoint checksum mismatch; refusing to load")

    pos = 0

    def take(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        out = struct.unpack(fmt, payload[pos:pos + size])
        pos += size
        return out

    (meta_len,) = take("<I")
    meta = json.loads(payload[pos:pos + meta_len])
    pos += meta_len
    model = ModelConfig(**meta["model"])
    (count,) = take("<I")
    params = {}
    for _ in range(count):
        (nlen,) = take("<H")
        name = payload[pos:pos + nlen].decode()
        pos += nlen
        (ndim,) = take("<B")
        shape = take(f"<{ndim}I")
        n = int(np.prod(shape)) * 8
        values = np.frombuffer(payload[pos:pos + n], dtype="<f8").reshape(shape)
        pos += n
        params[name] = Tensor(values.astype(np.float64), requires_grad=True, name=name)
    expected = param_shapes(model)
    if set(expected) != set(params):
        raise FormatError("checkpoint parameters do not match its model dimensions")
    for name, shape in expected.items():
        if params[name].shape != shape:
            raise FormatError(f"checkpoint parameter {name!r} has shape {params[name].shape}, expected {shape}")
    return Checkpoint(model, params, meta.get("config", {}))


def save_checkpoint(path, model: ModelConfig, params: Mapping[str, Tensor], snapshot: Mapping | None = None) -> None:
    Path(path).write_bytes(pack_checkpoint(model, params, snapshot))


def load_checkpoint(path) -> Checkpoint:
    return unpack_checkpoint(Path(path).read_bytes())


# -- reports -------------------------------------------------------------------

def loss_csv(history: Sequence[float]) -> str:
    return "epoch,loss\n" + "".join(f"{i},{format(v, '.17g')}\n" for i, v in enumerate(history, 1))


def metrics_text(metrics: Mapping[str, Any]) -> str:
    lines = []
    for k, v in metrics.items():
        if v is None:
            v = "n/a"
        elif isinstance(v, float):
            v = format(v, ".6g")
        lines.append(f"{k} = {v}")
    return "\n".join(lines) + "\n"
