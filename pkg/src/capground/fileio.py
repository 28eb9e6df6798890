"""File formats: dense float binaries (feature maps, checkpoints), the
vocabulary text file, JSON Lines box/caption files, heat-map export, and the
per-run manifest.

Binary layout is little-endian throughout: a 4-byte magic, a u32 header, then
float32 payloads in row-major order.
"""

from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .errors import InvalidArgument
from .grounding import GroundingParams, Vocabulary
from .milhead import MilParams
from .objectness import Box

FMAP_MAGIC = b"FMAP"
GPAR_MAGIC = b"GPAR"
MPAR_MAGIC = b"MPAR"
FORMAT_VERSION = 1


def _read_header(fh, magic, n_fields):
    got = fh.read(4)
    if got != magic:
        raise InvalidArgument(f"bad magic {got!r}, expected {magic!r}")
    vals = struct.unpack("<" + "I" * n_fields, fh.read(4 * n_fields))
    if vals[0] != FORMAT_VERSION:
        raise InvalidArgument(f"unsupported version {vals[0]}")
    return vals[1:]


def _read_f32(fh, count) -> np.ndarray:
    data = np.frombuffer(fh.read(4 * count), dtype="<f4")
    if data.size != count:
        raise InvalidArgument("truncated float payload")
    return data.astype(np.float64)


def write_fmap(path, fmap: np.ndarray):
    fmap = np.asarray(fmap, dtype=np.float64)
    if fmap.ndim != 3:
        raise InvalidArgument("feature map must be 3D")
    with open(path, "wb") as fh:
        fh.write(FMAP_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, *fmap.shape))
        fh.write(fmap.astype("<f4").tobytes())


def read_fmap(path) -> np.ndarray:
    with open(path, "rb") as fh:
        rows, cols, channels = _read_header(fh, FMAP_MAGIC, 4)
        data = _read_f32(fh, rows * cols * channels)
    fmap = data.reshape(rows, cols, channels)
    if not np.all(np.isfinite(fmap)):
        raise InvalidArgument(f"non-finite values in {path}")
    return fmap


def write_grounding_params(path, params: GroundingParams):
    with open(path, "wb") as fh:
        fh.write(GPAR_MAGIC)
        fh.write(struct.pack("<IIII", FORMAT_VERSION, params.vocab_size,
                             params.feature_dim, params.embed_dim))
        for _, arr in params.arrays():
            fh.write(arr.astype("<f4").tobytes())


def read_grounding_params(path) -> GroundingParams:
    with open(path, "rb") as fh:
        v, d, e = _read_header(fh, GPAR_MAGIC, 4)
        emb = _read_f32(fh, v * e).reshape(v, e)
        proj = _read_f32(fh, d * e).reshape(d, e)
        proj_bias = _read_f32(fh, e)
        w_img = _read_f32(fh, d)
        b_img = float(_read_f32(fh, 1)[0])
        w_txt = _read_f32(fh, e)
        b_txt = float(_read_f32(fh, 1)[0])
    return GroundingParams(emb, proj, proj_bias, w_img, b_img, w_txt, b_txt)


def write_mil_params(path, params: MilParams):
    C, d = params.class_weights.shape
    with open(path, "wb") as fh:
        fh.write(MPAR_MAGIC)
        fh.write(struct.pack("<III", FORMAT_VERSION, C, d))
        fh.write(params.class_weights.astype("<f4").tobytes())
        fh.write(params.class_bias.astype("<f4").tobytes())


def read_mil_params(path) -> MilParams:
    with open(path, "rb") as fh:
        C, d = _read_header(fh, MPAR_MAGIC, 3)
        w = _read_f32(fh, C * d).reshape(C, d)
        b = _read_f32(fh, C)
    return MilParams(w, b)


def write_vocabulary(path, vocab: Vocabulary):
    with open(path, "w", encoding="utf-8") as fh:
        for word, freq in zip(vocab.words, vocab.frequencies):
            fh.write(f"{word}\t{freq}\n")


def read_vocabulary(path) -> Vocabulary:
    words, freqs = [], []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            word, freq = line.split("\t")
            words.append(word)
            freqs.append(int(freq))
    return Vocabulary(words, freqs)


def write_boxes_jsonl(path, per_image: dict, vocab: Vocabulary = None):
    """``per_image`` maps image_id -> list[Box]; classes are written as words
    when a vocabulary is supplied, else as bare indices."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id in per_image:
            boxes = per_image[image_id]
            rec = {"image_id": image_id,
                   "boxes": [[b.xmin, b.ymin, b.xmax, b.ymax] for b in boxes]}
            if any(b.score for b in boxes):
                rec["scores"] = [b.score for b in boxes]
            if any(b.class_word is not None for b in boxes):
                rec["classes"] = [
                    (vocab.words[b.class_word] if vocab and b.class_word is not None
                     else b.class_word) for b in boxes]
            fh.write(json.dumps(rec) + "\n")


def read_boxes_jsonl(path, vocab: Vocabulary = None) -> dict:
    per_image = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            boxes = []
            scores = rec.get("scores") or [0.0] * len(rec["boxes"])
            classes = rec.get("classes") or [None] * len(rec["boxes"])
            for coords, score, cls in zip(rec["boxes"], scores, classes):
                if isinstance(cls, str):
                    cls = vocab.word_index(cls) if vocab else cls
                boxes.append(Box(*coords, score=score, class_word=cls))
            per_image[rec["image_id"]] = boxes
    return per_image


def write_captions_jsonl(path, captions: dict):
    """``captions`` maps image_id -> raw caption text."""
    with open(path, "w", encoding="utf-8") as fh:
        for image_id, text in captions.items():
            fh.write(json.dumps({"image_id": image_id, "caption": text}) + "\n")


def read_captions_jsonl(path) -> dict:
    captions = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                rec = json.loads(line)
                captions[rec["image_id"]] = rec["caption"]
    return captions


def export_heatmap(amap, path):
    """8-bit grayscale image (PNG or PGM by extension), min-max normalized,
    plus a side-channel JSON with the raw range."""
    heat = np.asarray(amap.heat, dtype=np.float64)
    lo, hi = float(heat.min()), float(heat.max())
    scale = (hi - lo) if hi > lo else 1.0
    img = np.rint((heat - lo) / scale * 255).astype(np.uint8)
    path = Path(path)
    try:
        if path.suffix.lower() == ".pgm":
            with open(path, "wb") as fh:
                fh.write(f"P5\n{img.shape[1]} {img.shape[0]}\n255\n".encode())
                fh.write(img.tobytes())
        else:
            from PIL import Image
            Image.fromarray(img, mode="L").save(path)
    except OSError as exc:
        raise OSError(f"failed writing heat map to {path}: {exc}") from exc
    meta = {"class_word": int(amap.class_word), "min": lo, "max": hi}
    path.with_suffix(path.suffix + ".json").write_text(json.dumps(meta))


def read_heatmap_quantized(path) -> np.ndarray:
    path = Path(path)
    if path.suffix.lower() == ".pgm":
        with open(path, "rb") as fh:
            assert fh.readline().strip() == b"P5"
            cols, rows = map(int, fh.readline().split())
            assert fh.readline().strip() == b"255"
            return np.frombuffer(fh.read(rows * cols),
                                 dtype=np.uint8).reshape(rows, cols)
    from PIL import Image
    return np.asarray(Image.open(path), dtype=np.uint8)


def write_manifest(out_dir, stage: str, config: dict, seeds: dict,
                   inputs: dict, outputs: dict, timings: dict):
    """One manifest JSON per CLI run; rerunning with the same manifest must
    reproduce the outputs bit-exactly."""
    manifest = {"stage": stage, "config": config, "seeds": seeds,
                "inputs": inputs, "outputs": outputs, "timings": timings}
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"run_manifest_{stage}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    return path


def worker_count() -> int:
    """Worker-parallelism cap from the CAPG_THREADS environment variable."""
    try:
        return max(1, int(os.environ.get("CAPG_THREADS", "0"))) \
            if os.environ.get("CAPG_THREADS") else (os.cpu_count() or 1)
    except ValueError:
        return 1
