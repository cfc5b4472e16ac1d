"""
Seed derivation and config hashing.

Component seeds are keyed by (master seed, component name, grid coordinate)
so grid cells can run in any order, or be rerun alone, without changing
results.
"""

import hashlib
import json


def derive_seed(master_seed: int, component: str, *coordinate) -> int:
    """
    Derive a 64-bit component seed.

    Args:
        master_seed: The experiment's master seed
        component: Component name (e.g. "adasyn", "forest")
        *coordinate: Grid coordinate parts (reducer, classifier, fold, ...)

    Returns:
        Unsigned 64-bit integer seed
    """
    combined = "|".join([str(master_seed), component, *(str(part) for part in coordinate)])
    digest = hashlib.md5(combined.encode()).digest()
    return int.from_bytes(digest[:8], "big")


def config_hash(params: dict) -> str:
    """
    Hash a parameter dictionary for provenance headers.

    Args:
        params: JSON-serializable parameters

    Returns:
        12-character hex hash
    """
    # Sort keys for consistency
    sorted_params = json.dumps(params, sort_keys=True, default=str)
    return hashlib.md5(sorted_params.encode()).hexdigest()[:12]


def provenance_line(params_hash: str, master_seed: int) -> str:
    """Header comment written at the top of every output file."""
    return f"# config_hash={params_hash} master_seed={master_seed}"
