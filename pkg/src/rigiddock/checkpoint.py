"""Named-tensor checkpoint file: one JSON header line, then raw f64 payload.

Layout: a single UTF-8 JSON object terminated by a newline, followed by the
concatenated little-endian float64 tensor payloads. The header carries
``format_version``, parallel ``names`` / ``shapes`` / ``offsets`` lists
(offsets in bytes from the start of the payload), and an optional ``extra``
object for small JSON metadata such as the model configuration.

Round trips are bit-exact: the payload bytes are the tensors' C-order bytes.
"""

from __future__ import annotations

import json
import os
import tempfile

import numpy as np

FORMAT_VERSION = 1


class CheckpointError(ValueError):
    """File does not conform to the checkpoint layout."""


def save_named_tensors(path: str, tensors: dict[str, np.ndarray], extra: dict | None = None) -> None:
    """Write ``tensors`` to ``path`` atomically (temp file + rename)."""
    names = list(tensors.keys())
    arrays = []
    shapes = []
    offsets = []
    pos = 0
    for name in names:
        arr = np.asarray(tensors[name], dtype=np.float64, order="C")
        arrays.append(arr)
        shapes.append(list(arr.shape))
        offsets.append(pos)
        pos += arr.nbytes
    header = {
        "format_version": FORMAT_VERSION,
        "names": names,
        "shapes": shapes,
        "offsets": offsets,
    }
    if extra is not None:
        header["extra"] = extra
    blob = json.dumps(header).encode("utf-8") + b"\n"

    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".ckpt-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
            for arr in arrays:
                fh.write(arr.astype("<f8", copy=False).tobytes())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_named_tensors(path: str) -> tuple[dict[str, np.ndarray], dict]:
    """Read a checkpoint; returns (tensors, extra)."""
    with open(path, "rb") as fh:
        line = fh.readline()
        try:
            header = json.loads(line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise CheckpointError(f"{path}: malformed header: {e}") from None
        if header.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(
                f"{path}: unsupported format_version {header.get('format_version')!r}"
            )
        payload = fh.read()

    names = header["names"]
    shapes = header["shapes"]
    offsets = header["offsets"]
    if not (len(names) == len(shapes) == len(offsets)):
        raise CheckpointError(f"{path}: header lists have mismatched lengths")
    tensors: dict[str, np.ndarray] = {}
    for name, shape, off in zip(names, shapes, offsets):
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if off < 0 or off + nbytes > len(payload):
            raise CheckpointError(f"{path}: tensor {name!r} extends past payload end")
        flat = np.frombuffer(payload, dtype="<f8", count=count, offset=off)
        tensors[name] = flat.reshape(shape).astype(np.float64)
    return tensors, header.get("extra", {})
