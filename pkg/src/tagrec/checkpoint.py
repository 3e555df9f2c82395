"""Versioned, byte-reproducible checkpoint files.

A checkpoint is a zip archive holding ``meta.json`` plus one ``.npy`` member
per array. Member timestamps are pinned so identical content always yields
identical bytes (``numpy.savez`` stamps the current time).
"""

from __future__ import annotations

import io
import json
import zipfile
from pathlib import Path

import numpy as np

from .errors import DataError

_EPOCH = (1980, 1, 1, 0, 0, 0)


def save_checkpoint(path: str | Path, format_tag: str, meta: dict, arrays: dict[str, np.ndarray]) -> None:
    payload = {"format": format_tag, **meta}
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        info = zipfile.ZipInfo("meta.json", date_time=_EPOCH)
        info.compress_type = zipfile.ZIP_DEFLATED
        zf.writestr(info, json.dumps(payload, sort_keys=True, indent=1))
        for name in sorted(arrays):
            buf = io.BytesIO()
            np.save(buf, np.ascontiguousarray(arrays[name]), allow_pickle=False)
            info = zipfile.ZipInfo(f"{name}.npy", date_time=_EPOCH)
            info.compress_type = zipfile.ZIP_DEFLATED
            zf.writestr(info, buf.getvalue())


def load_checkpoint(path: str | Path, format_tag: str) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            arrays = {
                name[: -len(".npy")]: np.load(io.BytesIO(zf.read(name)), allow_pickle=False)
                for name in zf.namelist()
                if name.endswith(".npy")
            }
    except (zipfile.BadZipFile, KeyError, ValueError) as exc:
        raise DataError(f"{path}: not a checkpoint ({exc})") from None
    if meta.get("format") != format_tag:
        raise DataError(f"{path}: expected format {format_tag!r}, found {meta.get('format')!r}")
    return meta, arrays
