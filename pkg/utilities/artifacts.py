"""
Self-describing binary container for fitted networks, reducers and
classifiers.

Layout:
    <magic>\\n
    <one-line JSON header, includes "arrays": [[name, shape], ...]>\\n
    row-major little-endian float64 blocks, in header order
"""

import json
from typing import Dict, List, Tuple

import numpy as np

from utilities.errors import ArtifactError

NETWORK_MAGIC = "OPCLASS-NN1"
REDUCER_MAGIC = "OPCLASS-RD1"
CLASSIFIER_MAGIC = "OPCLASS-CL1"


def encode(magic: str, header: Dict, arrays: Dict[str, np.ndarray]) -> bytes:
    """
    Serialize a header and named arrays into bytes.

    Args:
        magic: File magic string
        header: JSON-serializable metadata
        arrays: Ordered mapping of name -> array

    Returns:
        The encoded artifact
    """
    header = dict(header)
    header["arrays"] = [[name, list(np.shape(arr))] for name, arr in arrays.items()]
    parts = [magic.encode() + b"\n", json.dumps(header, sort_keys=True).encode() + b"\n"]
    for arr in arrays.values():
        parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())
    return b"".join(parts)


def decode(payload: bytes, magic: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    """
    Parse bytes produced by encode().

    Args:
        payload: Raw artifact bytes
        magic: Expected magic string

    Returns:
        Tuple of (header, arrays)

    Raises:
        ArtifactError: on wrong magic, bad header, or truncated data
    """
    first = payload.find(b"\n")
    if first < 0 or payload[:first].decode(errors="replace") != magic:
        raise ArtifactError(f"expected magic {magic}")
    second = payload.find(b"\n", first + 1)
    if second < 0:
        raise ArtifactError("missing header line")
    try:
        header = json.loads(payload[first + 1:second].decode())
    except (json.JSONDecodeError, UnicodeDecodeError) as e:
        raise ArtifactError(f"unreadable header: {e}") from e

    arrays: Dict[str, np.ndarray] = {}
    offset = second + 1
    for name, shape in header.pop("arrays", []):
        count = int(np.prod(shape)) if shape else 1
        nbytes = count * 8
        if offset + nbytes > len(payload):
            raise ArtifactError(f"truncated block {name!r}")
        block = np.frombuffer(payload, dtype="<f8", count=count, offset=offset)
        arrays[name] = block.reshape(shape).astype(np.float64)
        offset += nbytes
    if offset != len(payload):
        raise ArtifactError("trailing bytes after last block")
    return header, arrays


def write(path: str, magic: str, header: Dict, arrays: Dict[str, np.ndarray]) -> None:
    with open(path, "wb") as f:
        f.write(encode(magic, header, arrays))


def read(path: str, magic: str) -> Tuple[Dict, Dict[str, np.ndarray]]:
    try:
        with open(path, "rb") as f:
            payload = f.read()
    except IOError as e:
        raise ArtifactError(f"cannot read {path}: {e}") from e
    return decode(payload, magic)


def pack_list(prefix: str, arrays: List[np.ndarray]) -> Dict[str, np.ndarray]:
    """Name a list of arrays as prefix0, prefix1, ..."""
    return {f"{prefix}{i}": arr for i, arr in enumerate(arrays)}


def unpack_list(prefix: str, arrays: Dict[str, np.ndarray]) -> List[np.ndarray]:
    out = []
    i = 0
    while f"{prefix}{i}" in arrays:
        out.append(arrays[f"{prefix}{i}"])
        i += 1
    return out
