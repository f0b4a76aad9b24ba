"""Bit-exact file formats: binary tensors, datasets, checkpoints.

Tensor files carry a 4-byte magic, a little-endian u32 format version,
rank, dims, a row-major float64 payload, and one length-prefixed UTF-8
metadata block.  Checkpoints are directories of tensor files plus a plain
manifest listing names, shapes and a flat config snapshot.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import FormatError, IoError
from .model import Dataset, ModelParams
from .nets import MlpWeights

MAGIC = b"SNIC"
FORMAT_VERSION = 1
TENSOR_SUFFIX = ".snt"


def write_tensor(path, array: np.ndarray, meta: str = "") -> None:
    """Write one float64 tensor with provenance metadata."""
    array = np.asarray(array, dtype=np.float64)
    if array.ndim and not array.flags["C_CONTIGUOUS"]:
        array = np.ascontiguousarray(array)
    meta_bytes = meta.encode("utf-8")
    try:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            fh.write(struct.pack("<I", FORMAT_VERSION))
            fh.write(struct.pack("<I", array.ndim))
            for dim in array.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(array.astype("<f8").tobytes(order="C"))
            fh.write(struct.pack("<I", len(meta_bytes)))
            fh.write(meta_bytes)
    except OSError as err:
        raise IoError(f"cannot write tensor {path}: {err}") from err


def read_tensor(path) -> tuple[np.ndarray, str]:
    """Read a tensor file back; raises FormatError on a bad layout."""
    try:
        blob = Path(path).read_bytes()
    except OSError as err:
        raise IoError(f"cannot read tensor {path}: {err}") from err
    if len(blob) < 12 or blob[:4] != MAGIC:
        raise FormatError(f"{path}: bad magic (want {MAGIC!r})")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version > FORMAT_VERSION:
        raise FormatError(
            f"{path}: format version {version} is newer than supported {FORMAT_VERSION}"
        )
    rank = struct.unpack_from("<I", blob, 8)[0]
    ofs = 12
    if len(blob) < ofs + 4 * rank:
        raise FormatError(f"{path}: truncated dims block")
    dims = struct.unpack_from(f"<{rank}I", blob, ofs) if rank else ()
    ofs += 4 * rank
    count = int(np.prod(dims)) if rank else 1
    nbytes = 8 * count
    if len(blob) < ofs + nbytes + 4:
        raise FormatError(f"{path}: payload shorter than dims promise")
    array = np.frombuffer(blob, dtype="<f8", count=count, offset=ofs).reshape(dims)
    ofs += nbytes
    meta_len = struct.unpack_from("<I", blob, ofs)[0]
    ofs += 4
    if len(blob) < ofs + meta_len:
        raise FormatError(f"{path}: truncated metadata block")
    meta = blob[ofs : ofs + meta_len].decode("utf-8")
    return array.copy(), meta


# -- datasets ---------------------------------------------------------------


def save_dataset(out_dir, dataset: Dataset) -> None:
    """One tensor file per array; ground truth written only when present."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    meta = json.dumps({"seed": dataset.seed, **dataset.meta})
    write_tensor(out / f"x{TENSOR_SUFFIX}", dataset.x, meta)
    if dataset.s is not None:
        write_tensor(out / f"s{TENSOR_SUFFIX}", dataset.s, meta)
    if dataset.u is not None:
        write_tensor(out / f"u{TENSOR_SUFFIX}", dataset.u.astype(np.float64), meta)
    if dataset.f_s is not None:
        write_tensor(out / f"f_s{TENSOR_SUFFIX}", dataset.f_s, meta)


def load_dataset(in_dir) -> Dataset:
    src = Path(in_dir)
    x_path = src / f"x{TENSOR_SUFFIX}"
    if not x_path.exists():
        raise IoError(f"no observation tensor at {x_path}")
    x, meta_raw = read_tensor(x_path)
    meta = json.loads(meta_raw) if meta_raw else {}

    def optional(name):
        path = src / f"{name}{TENSOR_SUFFIX}"
        return read_tensor(path)[0] if path.exists() else None

    u = optional("u")
    return Dataset(
        x=x,
        s=optional("s"),
        u=u.astype(np.int64) if u is not None else None,
        f_s=optional("f_s"),
        seed=meta.get("seed"),
        meta={k: v for k, v in meta.items() if k != "seed"},
    )


# -- checkpoints --------------------------------------------------------------


CHECKPOINT_VERSION = 1

_PARAM_TENSORS = (
    "init_dist",
    "trans",
    "init_mean",
    "init_prec",
    "dyn_matrix",
    "dyn_offset",
    "dyn_prec",
    "obs_noise_diag",
)


def save_checkpoint(
    out_dir,
    params: ModelParams,
    encoder: MlpWeights,
    config_snapshot: Optional[dict] = None,
) -> None:
    """Directory checkpoint: tensors plus a manifest with the snapshot."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries: list[tuple[str, np.ndarray]] = [
        (name, getattr(params, name)) for name in _PARAM_TENSORS
    ]
    for idx, (w, b) in enumerate(params.decoder.layers):
        entries.append((f"dec_W{idx}", w))
        entries.append((f"dec_b{idx}", b))
    for idx, (w, b) in enumerate(encoder.layers):
        entries.append((f"enc_W{idx}", w))
        entries.append((f"enc_b{idx}", b))
    lines = [f"checkpoint-version {CHECKPOINT_VERSION}", "[tensors]"]
    for name, arr in entries:
        arr = np.asarray(arr, dtype=np.float64)
        fname = f"{name}{TENSOR_SUFFIX}"
        write_tensor(out / fname, arr, meta=name)
        shape = "x".join(str(s) for s in arr.shape) if arr.ndim else "scalar"
        lines.append(f"{name} {shape} {fname}")
    lines.append("[model]")
    lines.append(f"N {params.N}")
    lines.append(f"d {params.d}")
    lines.append(f"K {params.K}")
    lines.append(f"M {params.M}")
    lines.append(f"decoder_layers {params.decoder.n_layers}")
    lines.append(f"decoder_activation {params.decoder.activation}")
    lines.append(f"encoder_layers {encoder.n_layers}")
    lines.append(f"encoder_activation {encoder.activation}")
    lines.append("[config]")
    for key, val in (config_snapshot or {}).items():
        lines.append(f"{key} {val}")
    try:
        (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    except OSError as err:
        raise IoError(f"cannot write manifest: {err}") from err


def load_checkpoint(in_dir) -> tuple[ModelParams, MlpWeights, dict]:
    src = Path(in_dir)
    manifest_path = src / "manifest.txt"
    if not manifest_path.exists():
        raise IoError(f"no manifest at {manifest_path}")
    lines = manifest_path.read_text(encoding="utf-8").splitlines()
    if not lines or not lines[0].startswith("checkpoint-version"):
        raise FormatError("manifest missing checkpoint-version header")
    version = int(lines[0].split()[1])
    if version > CHECKPOINT_VERSION:
        raise FormatError(
            f"checkpoint version {version} is newer than supported {CHECKPOINT_VERSION}"
        )
    section = None
    tensors: dict[str, np.ndarray] = {}
    model_info: dict[str, str] = {}
    config: dict[str, str] = {}
    for line in lines[1:]:
        line = line.strip()
        if not line:
            continue
        if line.startswith("["):
            section = line
            continue
        if section == "[tensors]":
            name, _shape, fname = line.split()
            tensors[name], _ = read_tensor(src / fname)
        elif section == "[model]":
            key, val = line.split(maxsplit=1)
            model_info[key] = val
        elif section == "[config]":
            key, val = line.split(maxsplit=1)
            config[key] = val
    try:
        n = int(model_info["N"])
        d = int(model_info["d"])
        k = int(model_info["K"])
        m = int(model_info["M"])
        dec_layers = int(model_info["decoder_layers"])
        enc_layers = int(model_info["encoder_layers"])
    except KeyError as err:
        raise FormatError(f"manifest missing model key {err}") from err
    decoder = MlpWeights(
        layers=[(tensors[f"dec_W{i}"], tensors[f"dec_b{i}"]) for i in range(dec_layers)],
        activation=model_info.get("decoder_activation", "leaky_tanh"),
    )
    encoder = MlpWeights(
        layers=[(tensors[f"enc_W{i}"], tensors[f"enc_b{i}"]) for i in range(enc_layers)],
        activation=model_info.get("encoder_activation", "relu"),
    )
    params = ModelParams(
        N=n,
        d=d,
        K=k,
        M=m,
        init_dist=tensors["init_dist"],
        trans=tensors["trans"],
        init_mean=tensors["init_mean"],
        init_prec=tensors["init_prec"],
        dyn_matrix=tensors["dyn_matrix"],
        dyn_offset=tensors["dyn_offset"],
        dyn_prec=tensors["dyn_prec"],
        decoder=decoder,
        obs_noise_diag=tensors["obs_noise_diag"],
    )
    params.validate()
    return params, encoder, config
