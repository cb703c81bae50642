"""Deterministic on-disk artifacts.

Checkpoints use a purpose-built container (versioned JSON header + raw
little-endian buffers) instead of pickle-based serializers so that identical
state produces identical bytes. All writes are atomic (temp file + rename);
manifests are sorted-key JSON without timestamps.
"""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from pathlib import Path

import numpy as np
import torch

from .errors import CheckpointError

MAGIC = b"VBPK1\x00"
FORMAT_VERSION = 1

_DTYPES = {
    "float64": np.float64,
    "float32": np.float32,
    "int64": np.int64,
    "uint8": np.uint8,
    "bool": np.bool_,
}


def atomic_write_bytes(path: str | Path, data: bytes):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _to_numpy(value) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        value = value.detach().cpu().numpy()
    arr = np.ascontiguousarray(value)
    if arr.dtype.name not in _DTYPES:
        raise CheckpointError(f"unsupported checkpoint dtype {arr.dtype.name}")
    return arr


def save_checkpoint(path: str | Path, tensors: dict, meta: dict | None = None):
    """Write named arrays + metadata. Arrays are stored in sorted-name order."""
    entries = []
    blobs = []
    offset = 0
    for name in sorted(tensors):
        arr = _to_numpy(tensors[name])
        if arr.dtype.byteorder == ">":  # keep buffers little-endian on any host
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        raw = arr.tobytes()
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(raw),
            }
        )
        blobs.append(raw)
        offset += len(raw)
    header = json.dumps(
        {"format_version": FORMAT_VERSION, "meta": meta or {}, "tensors": entries},
        sort_keys=True,
        separators=(",", ":"),
    ).encode()
    payload = MAGIC + len(header).to_bytes(8, "little") + header + b"".join(blobs)
    atomic_write_bytes(path, payload)


def load_checkpoint(path: str | Path) -> tuple[dict, dict]:
    """Returns ({name: np.ndarray}, meta). Raises CheckpointError on corruption."""
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint not found: {path}")
    data = path.read_bytes()
    if len(data) < len(MAGIC) + 8 or data[: len(MAGIC)] != MAGIC:
        raise CheckpointError(
            f"{path}: bad magic; expected a format_version={FORMAT_VERSION} "
            f"container (magic {MAGIC!r})"
        )
    hlen = int.from_bytes(data[len(MAGIC) : len(MAGIC) + 8], "little")
    start = len(MAGIC) + 8
    if start + hlen > len(data):
        raise CheckpointError(f"{path}: truncated header ({hlen} bytes declared)")
    try:
        header = json.loads(data[start : start + hlen].decode())
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"{path}: unreadable header: {e}") from e
    version = header.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format_version {version!r} not supported (this build reads {FORMAT_VERSION})"
        )
    body = data[start + hlen :]
    out = {}
    for ent in header["tensors"]:
        lo, hi = ent["offset"], ent["offset"] + ent["nbytes"]
        if hi > len(body):
            raise CheckpointError(f"{path}: tensor {ent['name']!r} extends past end of file")
        arr = np.frombuffer(body[lo:hi], dtype=_DTYPES[ent["dtype"]]).reshape(ent["shape"])
        out[ent["name"]] = arr.copy()
    return out, header.get("meta", {})


# --- torch state packing -----------------------------------------------------


def pack_module(module: torch.nn.Module, prefix: str) -> dict:
    return {f"{prefix}.{k}": v for k, v in module.state_dict().items()}


def unpack_module(module: torch.nn.Module, arrays: dict, prefix: str):
    state = {}
    for k, v in module.state_dict().items():
        key = f"{prefix}.{k}"
        if key not in arrays:
            raise CheckpointError(f"checkpoint missing tensor {key!r}")
        state[k] = torch.as_tensor(arrays[key]).to(v.dtype).reshape(v.shape)
    module.load_state_dict(state)


def pack_adam(opt: torch.optim.Adam, named_params: list[tuple[str, torch.Tensor]], prefix: str) -> dict:
    """Adam state keyed by parameter name (stable across runs)."""
    out = {}
    for name, p in named_params:
        st = opt.state.get(p)
        if not st:
            continue
        out[f"{prefix}.{name}.step"] = np.array([int(st["step"])], dtype=np.int64)
        out[f"{prefix}.{name}.exp_avg"] = st["exp_avg"]
        out[f"{prefix}.{name}.exp_avg_sq"] = st["exp_avg_sq"]
    return out


def unpack_adam(opt: torch.optim.Adam, arrays: dict, named_params: list[tuple[str, torch.Tensor]], prefix: str):
    for name, p in named_params:
        key = f"{prefix}.{name}.step"
        if key not in arrays:
            continue
        opt.state[p] = {
            "step": torch.tensor(float(arrays[key][0])),
            "exp_avg": torch.as_tensor(arrays[f"{prefix}.{name}.exp_avg"]).reshape(p.shape),
            "exp_avg_sq": torch.as_tensor(arrays[f"{prefix}.{name}.exp_avg_sq"]).reshape(p.shape),
        }


def pack_rng(rng: torch.Generator, prefix: str) -> dict:
    return {f"{prefix}.state": rng.get_state().numpy()}


def unpack_rng(rng: torch.Generator, arrays: dict, prefix: str):
    key = f"{prefix}.state"
    if key not in arrays:
        raise CheckpointError(f"checkpoint missing rng state {key!r}")
    rng.set_state(torch.as_tensor(arrays[key], dtype=torch.uint8))


# --- images, manifests, hashes ----------------------------------------------


def write_manifest(path: str | Path, payload: dict):
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    atomic_write_bytes(path, text.encode())


def read_manifest(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())


def save_image_png(path: str | Path, image) -> None:
    """image: (H, W, 3) or (H, W) float in [0, 1]."""
    from PIL import Image

    arr = image.detach().cpu().numpy() if isinstance(image, torch.Tensor) else np.asarray(image)
    u8 = np.clip(np.round(arr * 255.0), 0, 255).astype(np.uint8)
    img = Image.fromarray(u8, mode="RGB" if u8.ndim == 3 else "L")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    import io

    buf = io.BytesIO()
    img.save(buf, format="PNG")
    atomic_write_bytes(path, buf.getvalue())


def load_image_png(path: str | Path) -> torch.Tensor:
    from PIL import Image

    arr = np.asarray(Image.open(path).convert("RGB"), dtype=np.float64) / 255.0
    return torch.from_numpy(arr)


def save_array_npy(path: str | Path, array) -> None:
    arr = _to_numpy(array)
    import io

    buf = io.BytesIO()
    np.save(buf, arr)
    atomic_write_bytes(path, buf.getvalue())


def load_array_npy(path: str | Path) -> np.ndarray:
    return np.load(Path(path))


def save_view(out_dir: str | Path, stem: str, view) -> dict:
    """RenderedView -> rgb PNG + mask PNG + raw float depth (.npy)."""
    out = Path(out_dir)
    save_image_png(out / f"{stem}.png", view.rgb)
    save_image_png(out / f"{stem}_mask.png", view.mask)
    save_array_npy(out / f"{stem}_depth.npy", view.depth)
    return {
        "rgb": f"{stem}.png",
        "mask": f"{stem}_mask.png",
        "depth": f"{stem}_depth.npy",
        "near": view.near,
        "far": view.far,
    }


def code_version_hash() -> str:
    """Content hash over this package's sources, recorded in manifests."""
    root = Path(__file__).parent
    h = hashlib.sha256()
    for p in sorted(root.rglob("*.py")):
        h.update(str(p.relative_to(root)).encode())
        h.update(b"\0")
        h.update(p.read_bytes())
        h.update(b"\0")
    return h.hexdigest()


def cache_dir() -> Path:
    env = os.environ.get("VARIBODY_CACHE")
    if env:
        return Path(env)
    return Path.home() / ".cache" / "varibody"
