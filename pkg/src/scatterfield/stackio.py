"""Binary stack container and dataset manifests.

The stack container is the interchange format between the simulator, the
baselines and the training harness.  Byte layout (little-endian throughout):

    magic      4 bytes  b"SBRB"
    version    1 byte   0x01
    header_len u32      byte length of the JSON header
    header     UTF-8 JSON
    payload    row-major float32 samples, 4 * prod(shape) bytes

The JSON header carries at least ``dtype`` (always ``"f32le"``), ``shape``
and ``axes`` (``"y,x"``, ``"c,y,x"`` or ``"z,y,x"``); geometry keys
(``pixel_pitch_um``, ``z0_um``, ``dz_um``, ``x0_um``, ``y0_um``) and a
``meta`` block are optional.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np

MAGIC = b"SBRB"
VERSION = 1


class StackFormatError(Exception):
    """Base class for malformed stack files."""


class BadMagicError(StackFormatError):
    pass


class UnsupportedVersionError(StackFormatError):
    pass


class TruncatedFileError(StackFormatError):
    pass


class HeaderError(StackFormatError):
    pass


def write_stack(path: str | Path, data: np.ndarray, header: dict) -> None:
    """Write ``data`` with ``header`` to ``path``, fsyncing before return.

    The header's ``shape``/``axes`` must be consistent with ``data``:
    shape must match exactly and the axes string must have one name per
    dimension.
    """
    data = np.asarray(data)
    header = dict(header)
    header.setdefault("dtype", "f32le")
    if header["dtype"] != "f32le":
        raise HeaderError(f"unsupported dtype {header['dtype']!r}")
    header.setdefault("shape", list(data.shape))
    if list(header["shape"]) != list(data.shape):
        raise HeaderError(f"header shape {header['shape']} != data shape {list(data.shape)}")
    axes = header.get("axes")
    if axes is None:
        axes = {1: "x", 2: "y,x", 3: "z,y,x"}.get(data.ndim)
        if axes is None:
            raise HeaderError(f"no default axes for rank {data.ndim}")
        header["axes"] = axes
    if len(header["axes"].split(",")) != data.ndim:
        raise HeaderError(f"axes {header['axes']!r} does not match rank {data.ndim}")

    header_bytes = json.dumps(header).encode("utf-8")
    payload = np.ascontiguousarray(data, dtype="<f4").tobytes()
    path = Path(path)
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(bytes([VERSION]))
        f.write(np.uint32(len(header_bytes)).astype("<u4").tobytes())
        f.write(header_bytes)
        f.write(payload)
        f.flush()
        os.fsync(f.fileno())


def read_stack(path: str | Path) -> tuple[np.ndarray, dict]:
    """Read a stack file, validating magic/version/lengths before the payload."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(9)
        if len(head) < 9:
            raise TruncatedFileError(f"{path}: file too short for fixed header ({len(head)} bytes)")
        if head[:4] != MAGIC:
            raise BadMagicError(f"{path}: bad magic {head[:4]!r}")
        if head[4] != VERSION:
            raise UnsupportedVersionError(f"{path}: unsupported version {head[4]}")
        header_len = int(np.frombuffer(head[5:9], dtype="<u4")[0])
        header_bytes = f.read(header_len)
        if len(header_bytes) < header_len:
            raise TruncatedFileError(
                f"{path}: truncated header, expected {header_len} bytes, got {len(header_bytes)}"
            )
        try:
            header = json.loads(header_bytes.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise HeaderError(f"{path}: invalid JSON header: {e}") from e
        if header.get("dtype") != "f32le":
            raise HeaderError(f"{path}: unsupported dtype {header.get('dtype')!r}")
        shape = tuple(int(s) for s in header["shape"])
        expected = 4 * int(np.prod(shape)) if shape else 4
        payload = f.read(expected + 1)
        if len(payload) < expected:
            raise TruncatedFileError(
                f"{path}: truncated payload, expected {expected} bytes, got {len(payload)}"
            )
        if len(payload) > expected:
            raise StackFormatError(f"{path}: {len(payload) - expected} trailing bytes after payload")
    data = np.frombuffer(payload[:expected], dtype="<f4").reshape(shape)
    return data.astype(np.float32), header


def export_tiff(path: str | Path, data: np.ndarray) -> None:
    """Best-effort float32 (multi-page) TIFF export for microscopy-tool interop."""
    from PIL import Image

    data = np.asarray(data, dtype=np.float32)
    if data.ndim == 2:
        Image.fromarray(data, mode="F").save(path)
        return
    pages = [Image.fromarray(plane, mode="F") for plane in data]
    pages[0].save(path, save_all=True, append_images=pages[1:])


# --- dataset manifests -----------------------------------------------------

SAMPLE_FILES = {
    "measurement_path": "{id}_meas.sbrb",
    "views_path": "{id}_views.sbrb",
    "refocus_path": "{id}_refocus.sbrb",
    "volume_path": "{id}_volume.sbrb",
    "emitters_csv": "{id}_emitters.csv",
}


class ManifestError(Exception):
    pass


@dataclass
class Manifest:
    records: list[dict]
    root: Path

    def by_id(self) -> dict[str, dict]:
        return {r["id"]: r for r in self.records}

    def split(self, name: str) -> list[dict]:
        return [r for r in self.records if r["split"] == name]

    def path_of(self, record: dict, key: str) -> Path:
        return self.root / record[key]


def build_manifest(
    dataset_dir: str | Path,
    split_seed: int,
    fractions: tuple[float, float] = (0.8, 0.2),
    split_names: tuple[str, str] = ("train", "val"),
) -> Manifest:
    """Scan a generated dataset directory and assign deterministic splits.

    Samples are discovered from ``*_meas.sbrb`` files.  The shuffle is a
    deterministic function of ``split_seed``; the first split gets
    ``floor(n * fractions[0])`` samples, the second split the remainder.
    """
    root = Path(dataset_dir)
    ids = sorted(p.name[: -len("_meas.sbrb")] for p in root.glob("*_meas.sbrb"))
    if not ids:
        raise ManifestError(f"{root}: no samples found (*_meas.sbrb)")
    records = []
    for sid in ids:
        rec: dict = {"id": sid}
        missing = []
        for key, pattern in SAMPLE_FILES.items():
            fname = pattern.format(id=sid)
            if not (root / fname).exists():
                missing.append(fname)
            rec[key] = fname
        if missing:
            raise ManifestError(f"sample {sid}: missing companion files {missing}")
        _, header = read_stack(root / rec["measurement_path"])
        meta = header.get("meta", {})
        rec["sbr"] = meta.get("sbr_target")
        rec["ls_um"] = meta.get("attenuation_ls_um")
        rec["seeds"] = meta.get("seeds", {})
        records.append(rec)

    order = np.random.default_rng(split_seed).permutation(len(records))
    n_first = int(len(records) * fractions[0])
    for rank, idx in enumerate(order):
        records[idx]["split"] = split_names[0] if rank < n_first else split_names[1]
    manifest = Manifest(records=records, root=root)
    save_manifest(manifest, root / "manifest.json", split_seed=split_seed, fractions=fractions)
    return manifest


def save_manifest(manifest: Manifest, path: str | Path, **provenance) -> None:
    doc = {"records": manifest.records}
    doc.update(provenance)
    with open(path, "w", encoding="utf-8", newline="\n") as f:
        json.dump(doc, f, indent=2)
        f.write("\n")


def load_manifest(path: str | Path) -> Manifest:
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        doc = json.load(f)
    records = doc["records"] if isinstance(doc, dict) else doc
    return Manifest(records=records, root=path.parent)


def verify_manifest(manifest: Manifest) -> list[str]:
    """Referential-integrity pass: unique ids, files exist and parse."""
    problems = []
    seen = set()
    for rec in manifest.records:
        sid = rec["id"]
        if sid in seen:
            problems.append(f"duplicate id {sid}")
        seen.add(sid)
        for key in SAMPLE_FILES:
            p = manifest.root / rec[key]
            if not p.exists():
                problems.append(f"{sid}: missing {rec[key]}")
            elif p.suffix == ".sbrb":
                try:
                    read_stack(p)
                except StackFormatError as e:
                    problems.append(f"{sid}: unreadable {rec[key]}: {e}")
    return problems
