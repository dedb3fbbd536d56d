from typing import Any, Dict
import os
import tempfile

from flax import serialization

from .utils import to_numpy_tree


CHECKPOINT_VERSION = 1


class CheckpointError(ValueError):
    """Unreadable, corrupt or incompatible checkpoint"""


def save_checkpoint(path: str, payload: Dict[str, Any]) -> str:
    """
    Serializes payload (a nested dict of arrays and plain values) with msgpack.
    The file is written to a temporary name first and renamed into place.
    """
    payload = dict(to_numpy_tree(payload), format_version=CHECKPOINT_VERSION)
    data = serialization.msgpack_serialize(payload)
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.remove(tmp_path)
        raise
    return path


def load_checkpoint(path: str) -> Dict[str, Any]:
    if not os.path.isfile(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    with open(path, "rb") as f:
        data = f.read()
    try:
        payload = serialization.msgpack_restore(data)
    except Exception as e:
        raise CheckpointError(f"Corrupt checkpoint {path}: {e}") from e
    if not isinstance(payload, dict) or "format_version" not in payload:
        raise CheckpointError(f"Corrupt checkpoint {path}: missing format version")
    version = payload["format_version"]
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(
            f"Checkpoint {path} has format version {version}, expected {CHECKPOINT_VERSION}")
    return payload
