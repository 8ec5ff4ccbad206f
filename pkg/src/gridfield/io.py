"""On-disk formats: dataset directories, checkpoints, images, configs.

Dataset layout follows the bounded-scene convention of public NVS
releases: ``intrinsics.txt`` (4x4), ``bbox.txt`` (6 bounds + voxel hint),
``pose/<s>_<idx>.txt`` camera-to-world matrices and ``rgb/<s>_<idx>.png``
images, where the split prefix is 0 for train, 1 for val, 2 for test.

Checkpoints are a JSON manifest followed by a flat little-endian float32
parameter payload in layer-manifest order and an optional packed
occupancy bitmap. Every format round-trips byte-exactly.
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np
from PIL import Image

from .core import Aabb, PositionalEncoding
from .grid import NetworkGrid
from .mlp import MlpArchitecture, MlpParams
from .occupancy import OccupancyGrid
from .render import Camera
from .scene import SceneDataset

CHECKPOINT_MAGIC = b"GFCKPT01"
SPLIT_PREFIX = {"train": 0, "val": 1, "test": 2}
PREFIX_SPLIT = {v: k for k, v in SPLIT_PREFIX.items()}


def write_png(path, img: np.ndarray):
    """Store a [0,1] float image as 8-bit RGB (linear values scaled; no
    color management)."""
    arr = np.round(np.clip(np.asarray(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    Image.fromarray(arr, mode="RGB").save(str(path), format="PNG")


def load_png(path) -> np.ndarray:
    with Image.open(str(path)) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.uint8)
    return arr.astype(np.float32) / np.float32(255.0)


def quantize_u8(img: np.ndarray) -> np.ndarray:
    """Snap a float image to the 8-bit grid, exactly as a PNG round trip
    would; generated datasets apply this so save/load is the identity."""
    u8 = np.round(np.clip(np.asarray(img), 0.0, 1.0) * 255.0).astype(np.uint8)
    return u8.astype(np.float32) / np.float32(255.0)


def _parse_matrix(path: Path, rows: int, cols: int) -> np.ndarray:
    try:
        text = path.read_text()
    except FileNotFoundError:
        raise FileNotFoundError(f"{path}: file missing") from None
    values = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line:
            continue
        for tok in line.split():
            try:
                values.append(float(tok))
            except ValueError:
                raise ValueError(f"{path}:{lineno}: not a number: {tok!r}") from None
    if len(values) != rows * cols:
        raise ValueError(f"{path}: expected {rows * cols} values, found {len(values)}")
    return np.array(values).reshape(rows, cols)


def write_dataset(ds: SceneDataset, path) -> None:
    """Write a dataset in the directory layout ``load_dataset`` reads."""
    root = Path(path)
    (root / "pose").mkdir(parents=True, exist_ok=True)
    (root / "rgb").mkdir(parents=True, exist_ok=True)
    cam0 = ds.cameras[0]
    intrinsics = np.array(
        [
            [cam0.fx, 0.0, cam0.cx, 0.0],
            [0.0, cam0.fy, cam0.cy, 0.0],
            [0.0, 0.0, 1.0, 0.0],
            [0.0, 0.0, 0.0, 1.0],
        ]
    )
    np.savetxt(root / "intrinsics.txt", intrinsics, fmt="%.17g")
    bbox = np.concatenate([ds.aabb.b_min, ds.aabb.b_max, [ds.aabb.extent.max() / 16.0]])
    np.savetxt(root / "bbox.txt", bbox[None, :], fmt="%.17g")
    counters = {k: 0 for k in SPLIT_PREFIX}
    for img, cam, split in zip(ds.images, ds.cameras, ds.split):
        stem = f"{SPLIT_PREFIX[split]}_{counters[split]:04d}"
        counters[split] += 1
        np.savetxt(root / "pose" / f"{stem}.txt", cam.c2w, fmt="%.17g")
        write_png(root / "rgb" / f"{stem}.png", img)


def load_dataset(path) -> SceneDataset:
    """Load a dataset directory; poses are camera-to-world, bounds come
    from the bbox file. Raises with the offending path on malformed input."""
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"{root}: dataset directory missing")
    for required in ("intrinsics.txt", "bbox.txt"):
        if not (root / required).exists():
            raise FileNotFoundError(f"{root / required}: file missing")
    intr = _parse_matrix(root / "intrinsics.txt", 4, 4)
    fx, fy, cx, cy = intr[0, 0], intr[1, 1], intr[0, 2], intr[1, 2]
    bbox = _parse_matrix(root / "bbox.txt", 1, 7).ravel()
    aabb = Aabb(bbox[:3], bbox[3:6])

    pose_dir, rgb_dir = root / "pose", root / "rgb"
    if not pose_dir.is_dir() or not rgb_dir.is_dir():
        raise FileNotFoundError(f"{root}: needs pose/ and rgb/ subdirectories")
    pose_files = sorted(pose_dir.glob("*.txt"))
    rgb_files = sorted(rgb_dir.glob("*.png"))
    if [p.stem for p in pose_files] != [p.stem for p in rgb_files]:
        raise ValueError(
            f"{root}: pose/rgb views disagree "
            f"({len(pose_files)} poses vs {len(rgb_files)} images)"
        )
    if not pose_files:
        raise ValueError(f"{root}: dataset contains no views")

    images, cameras, split = [], [], []
    for pose_file, rgb_file in zip(pose_files, rgb_files):
        prefix = pose_file.stem.split("_")[0]
        try:
            split.append(PREFIX_SPLIT[int(prefix)])
        except (KeyError, ValueError):
            raise ValueError(f"{pose_file}: unknown split prefix {prefix!r}") from None
        c2w = _parse_matrix(pose_file, 4, 4)
        img = load_png(rgb_file)
        h, w = img.shape[:2]
        cameras.append(Camera(width=w, height=h, fx=fx, fy=fy, cx=cx, cy=cy, c2w=c2w))
        images.append(img)
    return SceneDataset(images=images, cameras=cameras, aabb=aabb, split=split)


def _arch_to_dict(arch: MlpArchitecture) -> dict:
    return dataclasses.asdict(arch)


def _encoding_to_dict(enc: PositionalEncoding) -> dict:
    return dataclasses.asdict(enc)


def save_checkpoint(path, grid: NetworkGrid, occ: OccupancyGrid | None = None) -> None:
    """Serialize a network lattice (and optional occupancy) to one file."""
    grid.params.validate()
    header = {
        "format_version": 1,
        "arch": _arch_to_dict(grid.arch),
        "encoding": _encoding_to_dict(grid.encoding),
        "resolution": [int(v) for v in grid.resolution],
        "aabb": {"b_min": list(grid.aabb.b_min), "b_max": list(grid.aabb.b_max)},
        "param_dtype": "<f4",
        "param_count": int(grid.n_cells) * grid.arch.parameter_count(),
        "occupancy": None
        if occ is None
        else {"resolution": [int(v) for v in occ.resolution], "n_bytes": len(occ.bits)},
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    payload = np.concatenate(
        [a.astype("<f4", copy=False).ravel() for _, a in grid.params.arrays()]
    )
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        f.write(payload.tobytes())
        if occ is not None:
            f.write(occ.bits.tobytes())


def load_checkpoint(path) -> tuple[NetworkGrid, OccupancyGrid | None]:
    """Inverse of ``save_checkpoint``; validates version and payload length
    before constructing anything."""
    blob = Path(path).read_bytes()
    if blob[:8] != CHECKPOINT_MAGIC:
        raise ValueError(f"{path}: not a checkpoint (bad magic)")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header = json.loads(blob[16 : 16 + header_len])
    if header.get("format_version") != 1:
        raise ValueError(f"{path}: unsupported format version {header.get('format_version')}")
    arch = MlpArchitecture(**header["arch"])
    enc = PositionalEncoding(**header["encoding"])
    resolution = np.array(header["resolution"], dtype=np.int64)
    aabb = Aabb(header["aabb"]["b_min"], header["aabb"]["b_max"])
    n_cells = int(np.prod(resolution))

    occ_info = header["occupancy"]
    occ_bytes = 0 if occ_info is None else occ_info["n_bytes"]
    param_bytes = header["param_count"] * 4
    expected = 16 + header_len + param_bytes + occ_bytes
    if len(blob) != expected:
        raise ValueError(f"{path}: payload length {len(blob)} != expected {expected}")

    flat = np.frombuffer(
        blob, dtype="<f4", count=header["param_count"], offset=16 + header_len
    )
    weights, biases = {}, {}
    cursor = 0
    for spec in arch.layers():
        n = n_cells * spec.out_dim * spec.in_dim
        weights[spec.name] = flat[cursor : cursor + n].reshape(n_cells, spec.out_dim, spec.in_dim).copy()
        cursor += n
        n = n_cells * spec.out_dim
        biases[spec.name] = flat[cursor : cursor + n].reshape(n_cells, spec.out_dim).copy()
        cursor += n
    grid = NetworkGrid(
        aabb=aabb,
        resolution=resolution,
        arch=arch,
        encoding=enc,
        params=MlpParams(arch, weights, biases),
    )
    occ = None
    if occ_info is not None:
        bits = np.frombuffer(blob, dtype=np.uint8, offset=16 + header_len + param_bytes).copy()
        occ = OccupancyGrid(aabb, np.array(occ_info["resolution"], dtype=np.int64), bits)
    return grid, occ


def load_config(path) -> dict:
    with open(path) as f:
        return json.load(f)


def save_json(path, payload: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")


def append_jsonl(path, record: dict) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, "a") as f:
        f.write(json.dumps(record, sort_keys=True) + "\n")
