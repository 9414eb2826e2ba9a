"""Versioned binary model snapshots with checksummed, bit-exact round trips.

Layout: magic line, big-endian uint32 header length, a canonical JSON header
(model tag, integer metadata, array directory with names/shapes/dtypes),
the raw little-endian array payloads in directory order, and a trailing
sha256 hex digest over everything before it.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .baselines import BprMfModel
from .errors import SnapshotError
from .model import AttentionParams, LatentFactors, NasParameters, SocialAttentionModel

MAGIC = b"NASRECSNAP\n"
FORMAT_VERSION = 1
_DTYPES = {"float64": "<f8", "int64": "<i8"}


def _pack(model_tag: str, meta: dict, arrays: list[tuple[str, np.ndarray]]) -> bytes:
    directory = []
    payloads = []
    for name, arr in arrays:
        if arr.dtype == np.float64:
            dtype = "float64"
        elif arr.dtype == np.int64:
            dtype = "int64"
        else:
            raise SnapshotError(f"unsupported dtype {arr.dtype} for array '{name}'")
        directory.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        payloads.append(np.ascontiguousarray(arr).astype(_DTYPES[dtype]).tobytes())
    header = {
        "format_version": FORMAT_VERSION,
        "model": model_tag,
        "meta": meta,
        "arrays": directory,
    }
    header_bytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    body = MAGIC + len(header_bytes).to_bytes(4, "big") + header_bytes + b"".join(payloads)
    return body + hashlib.sha256(body).hexdigest().encode("ascii")


def _unpack(blob: bytes) -> tuple[dict, dict[str, np.ndarray]]:
    if len(blob) < len(MAGIC) + 4 + 64 or not blob.startswith(MAGIC):
        raise SnapshotError("not a model snapshot (bad magic or truncated)")
    body, digest = blob[:-64], blob[-64:]
    if hashlib.sha256(body).hexdigest().encode("ascii") != digest:
        raise SnapshotError("snapshot checksum mismatch (file corrupt)")
    offset = len(MAGIC)
    header_len = int.from_bytes(body[offset:offset + 4], "big")
    offset += 4
    try:
        header = json.loads(body[offset:offset + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise SnapshotError(f"unreadable snapshot header: {exc}") from exc
    if header.get("format_version") != FORMAT_VERSION:
        raise SnapshotError(f"unsupported snapshot version {header.get('format_version')}")
    offset += header_len
    arrays: dict[str, np.ndarray] = {}
    for entry in header["arrays"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape)) if shape else 1
        dtype = np.dtype(_DTYPES[entry["dtype"]])
        nbytes = count * dtype.itemsize
        chunk = body[offset:offset + nbytes]
        if len(chunk) != nbytes:
            raise SnapshotError(f"snapshot truncated inside array '{entry['name']}'")
        arrays[entry["name"]] = np.frombuffer(chunk, dtype=dtype).reshape(shape).copy()
        offset += nbytes
    if offset != len(body):
        raise SnapshotError("snapshot has trailing bytes after the array payload")
    return header, arrays


def _social_arrays(model: SocialAttentionModel) -> list[tuple[str, np.ndarray]]:
    indptr = np.zeros(len(model.neighbors) + 1, dtype=np.int64)
    for u, neigh in enumerate(model.neighbors):
        indptr[u + 1] = indptr[u] + len(neigh)
    indices = (np.concatenate(model.neighbors) if indptr[-1] else
               np.array([], dtype=np.int64)).astype(np.int64)
    arrays = [
        ("factors.user_vecs", model.factors.user_vecs),
        ("factors.item_vecs", model.factors.item_vecs),
        ("graph.indptr", indptr),
        ("graph.indices", indices),
    ]
    arrays.extend(model.params.named_arrays())
    return arrays


def save_model(path: str | Path, model: SocialAttentionModel | BprMfModel) -> None:
    if isinstance(model, BprMfModel):
        meta = {"n": model.factors.n, "m": model.factors.m, "d": model.factors.d}
        blob = _pack("bpr_mf", meta, [
            ("factors.user_vecs", model.factors.user_vecs),
            ("factors.item_vecs", model.factors.item_vecs),
        ])
    else:
        meta = {
            "n": model.factors.n, "m": model.factors.m,
            "d": model.params.d, "h": model.params.h,
            "k_max": model.k_max, "star_mean": int(model.star_mean),
        }
        blob = _pack(model.tag, meta, _social_arrays(model))
    Path(path).write_bytes(blob)


def load_model(path: str | Path) -> SocialAttentionModel | BprMfModel:
    try:
        blob = Path(path).read_bytes()
    except OSError as exc:
        raise SnapshotError(f"cannot read snapshot {path}: {exc}") from exc
    header, arrays = _unpack(blob)
    tag = header["model"]
    meta = header["meta"]
    factors = LatentFactors(user_vecs=arrays["factors.user_vecs"],
                            item_vecs=arrays["factors.item_vecs"])
    if factors.n != meta["n"] or factors.m != meta["m"]:
        raise SnapshotError("snapshot metadata disagrees with array shapes")
    if tag == "bpr_mf":
        return BprMfModel(factors=factors)
    if tag not in ("nas", "nas_star"):
        raise SnapshotError(f"unknown model tag '{tag}'")
    d, h = meta["d"], meta["h"]
    att = None
    if tag == "nas":
        att = AttentionParams(user_w=arrays["attention.user_w"],
                              effect_w=arrays["attention.effect_w"],
                              bias=arrays["attention.bias"])
    try:
        params = NasParameters(
            d=d, h=h,
            effects_user_w=arrays["effects.user_w"],
            effects_friend_w=arrays["effects.friend_w"],
            effects_bias=arrays["effects.bias"],
            effects_hidden_w=[arrays[f"effects.hidden.{q}.w"] for q in range(h)],
            effects_hidden_b=[arrays[f"effects.hidden.{q}.b"] for q in range(h)],
            effects_out_w=arrays["effects.out_w"],
            effects_out_b=arrays["effects.out_b"],
            attention=att,
            extract_user_w=arrays["extract.user_w"],
            extract_social_w=arrays["extract.social_w"],
            extract_bias=arrays["extract.bias"],
            extract_hidden_w=[arrays[f"extract.hidden.{q}.w"] for q in range(h)],
            extract_hidden_b=[arrays[f"extract.hidden.{q}.b"] for q in range(h)],
        )
    except (KeyError, ValueError) as exc:
        raise SnapshotError(f"snapshot is missing or has malformed blocks: {exc}") from exc
    indptr = arrays["graph.indptr"]
    indices = arrays["graph.indices"]
    if len(indptr) != meta["n"] + 1:
        raise SnapshotError("snapshot adjacency does not match user count")
    neighbors = tuple(indices[indptr[u]:indptr[u + 1]] for u in range(meta["n"]))
    return SocialAttentionModel(factors=factors, params=params, neighbors=neighbors,
                                k_max=meta["k_max"], star_mean=bool(meta.get("star_mean", 0)))
