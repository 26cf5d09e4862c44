"""Image loading, result export and run manifests."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .composition import LayerSet
from .errors import DipIOError, ShapeError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".ppm", ".pgm", ".pnm", ".bmp", ".tif", ".tiff")
DEFAULT_MAX_SIZE = 384


def load_image(path) -> np.ndarray:
    """Decode an image to float64 ``H x W x C`` in ``[0, 1]``.

    8-bit values map to ``v / 255`` and 16-bit values to ``v / 65535``.
    Grey images keep a single channel and alpha channels are dropped.
    """
    path = Path(path)
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I"):
                arr = np.asarray(im, dtype=np.float64) / 65535.0
            elif mode in ("L", "1"):
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            elif mode == "LA":
                arr = np.asarray(im.convert("L"), dtype=np.float64) / 255.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
    except FileNotFoundError as exc:
        raise DipIOError(f"no such image: {path}") from exc
    except (UnidentifiedImageError, OSError, SyntaxError, ValueError) as exc:
        raise DipIOError(f"cannot decode image {path}: {exc}") from exc
    if arr.ndim == 2:
        arr = arr[..., None]
    return np.clip(arr, 0.0, 1.0)


def working_size(shape: tuple[int, int], max_size: int | None) -> tuple[int, int]:
    h, w = shape
    if not max_size or max(h, w) <= max_size:
        return h, w
    scale = max_size / max(h, w)
    return max(1, round(h * scale)), max(1, round(w * scale))


def resize_area(I: np.ndarray, size: tuple[int, int]) -> np.ndarray:
    """Area-average resize of a float image to ``(h, w)``."""
    I = np.asarray(I, dtype=np.float64)
    if I.shape[:2] == tuple(size):
        return I
    squeeze = I.ndim == 2
    if squeeze:
        I = I[..., None]
    h, w = size
    chans = [
        np.asarray(Image.fromarray(I[..., c].astype(np.float32), mode="F").resize((w, h), Image.BOX))
        for c in range(I.shape[-1])
    ]
    out = np.stack(chans, axis=-1).astype(np.float64)
    return out[..., 0] if squeeze else out


def to_working_resolution(I: np.ndarray, max_size: int | None = DEFAULT_MAX_SIZE) -> np.ndarray:
    return resize_area(I, working_size(I.shape[:2], max_size))


def list_images(directory) -> list[Path]:
    d = Path(directory)
    if not d.is_dir():
        raise DipIOError(f"not a directory: {d}")
    files = sorted(p for p in d.iterdir() if p.is_file() and p.suffix.lower() in IMAGE_SUFFIXES)
    if not files:
        raise DipIOError(f"no images found in {d}")
    return files


def load_frames(
    path,
    max_frames: int | None = None,
    stride: int = 1,
    max_size: int | None = DEFAULT_MAX_SIZE,
    resize: bool = True,
) -> list[np.ndarray]:
    """Frames of a directory of numbered images, in lexicographic name order.

    Every ``stride``-th frame is kept, up to ``max_frames``. With ``resize``
    all frames are brought to the working size of the first frame; without
    it mixed sizes are an error.
    """
    if stride < 1:
        raise ShapeError(f"stride must be >= 1, got {stride}")
    files = list_images(path)[::stride]
    if max_frames is not None:
        files = files[:max_frames]
    frames = [load_image(f) for f in files]
    if resize:
        size = working_size(frames[0].shape[:2], max_size)
        frames = [resize_area(f, size) for f in frames]
    elif len({f.shape for f in frames}) > 1:
        raise ShapeError(f"frames in {path} differ in size; enable resizing")
    return frames


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def _quantize(arr: np.ndarray, bits: int) -> np.ndarray:
    top = (1 << bits) - 1
    return np.round(np.clip(arr, 0.0, 1.0) * top).astype(np.uint16 if bits == 16 else np.uint8)


def save_image(path, arr: np.ndarray, bits: int = 8) -> Path:
    """Write ``arr`` (values clipped to [0, 1]) as PNG; 16-bit only for one channel."""
    arr = np.asarray(arr, dtype=np.float64)
    if arr.ndim == 3 and arr.shape[-1] == 1:
        arr = arr[..., 0]
    if bits == 16:
        if arr.ndim != 2:
            raise ShapeError("16-bit export supports single-channel images only")
        im = Image.fromarray(_quantize(arr, 16))
    else:
        im = Image.fromarray(_quantize(arr, 8))
    path = Path(path)
    try:
        im.save(path, format="PNG")
    except OSError as exc:
        raise DipIOError(f"cannot write {path}: {exc}") from exc
    return path


@dataclass
class RunManifest:
    task: str
    config: dict[str, Any]
    seed: int
    inputs: dict[str, str] = field(default_factory=dict)
    version: str = ""
    duration_s: float = 0.0
    final_loss: dict[str, float] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    extras: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunManifest":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunManifest":
        try:
            return cls.from_dict(json.loads(Path(path).read_text()))
        except FileNotFoundError as exc:
            raise DipIOError(f"no such manifest: {path}") from exc
        except (json.JSONDecodeError, TypeError) as exc:
            raise DipIOError(f"malformed manifest {path}: {exc}") from exc

    def verify(self, out_dir) -> list[str]:
        """Names of listed outputs that are missing or fail their checksum."""
        bad = []
        for name, digest in self.outputs.items():
            p = Path(out_dir) / name
            if not p.is_file() or sha256_file(p) != digest:
                bad.append(name)
        return bad


def hash_inputs(paths: Sequence) -> dict[str, str]:
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in list_images(p):
                out[str(f)] = sha256_file(f)
        else:
            if not p.is_file():
                raise DipIOError(f"no such input: {p}")
            out[str(p)] = sha256_file(p)
    return out


def _mask_image(layers: LayerSet) -> np.ndarray:
    if layers.scalar_mask:
        return np.full(layers.y1.shape[:2], float(layers.mask))
    return np.asarray(layers.mask)


def _write_layerset(layers: LayerSet, out: Path) -> list[Path]:
    files = [
        save_image(out / "y1.png", layers.y1),
        save_image(out / "y2.png", layers.y2),
        save_image(out / "mask.png", _mask_image(layers), bits=16),
        save_image(out / "reconstruction.png", layers.reconstruction),
    ]
    color = layers.extras.get("airlight_color")
    if color is not None:
        air = np.broadcast_to(np.asarray(color, dtype=np.float64), layers.y1.shape)
        files.append(save_image(out / "airlight.png", air))
    return files


def write_loss_curve(path, history: Sequence[dict]) -> Path:
    cols = ("iter", "total", "reconst", "excl", "reg")
    path = Path(path)
    with path.open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(cols)
        for row in history:
            wr.writerow([row["iter"]] + [repr(float(row[c])) for c in cols[1:]])
    return path


def export_results(layers, manifest: RunManifest, out_dir, history: Sequence[dict] = ()) -> list[Path]:
    """Write layers, mask, reconstruction, loss curve and manifest to ``out_dir``.

    A list of layer sets (video) gets one ``frame_NNN`` subdirectory each.
    Values are clipped to [0, 1] here and nowhere earlier. The manifest is
    written last and records a checksum of every other file.
    """
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise DipIOError(f"cannot create output directory {out}: {exc}") from exc
    files: list[Path] = []
    if isinstance(layers, LayerSet):
        files += _write_layerset(layers, out)
    else:
        for i, ls in enumerate(layers):
            sub = out / f"frame_{i:03d}"
            try:
                sub.mkdir(exist_ok=True)
            except OSError as exc:
                raise DipIOError(f"cannot create {sub}: {exc}") from exc
            files += _write_layerset(ls, sub)
    try:
        files.append(write_loss_curve(out / "loss_curve.csv", history))
    except OSError as exc:
        raise DipIOError(f"cannot write loss curve in {out}: {exc}") from exc
    manifest.outputs = {str(f.relative_to(out)): sha256_file(f) for f in files}
    mpath = out / "manifest.json"
    try:
        mpath.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True))
    except OSError as exc:
        raise DipIOError(f"cannot write {mpath}: {exc}") from exc
    return files + [mpath]


class Timer:
    def __enter__(self):
        self.start = time.perf_counter()
        return self

    def __exit__(self, *exc):
        self.elapsed = time.perf_counter() - self.start


__all__ = [
    "load_image",
    "load_frames",
    "list_images",
    "save_image",
    "resize_area",
    "to_working_resolution",
    "working_size",
    "export_results",
    "write_loss_curve",
    "RunManifest",
    "hash_inputs",
    "sha256_file",
]
