"""Checkpoint files: network parameters + normalizer stats + metadata.

A checkpoint is a numpy ``.npz`` archive (zip of arrays) with namespaced
keys plus a JSON metadata blob; see ``docs/checkpoints.md``. Round-trips are
bit-exact, and the content hash recorded alongside gates compatibility.
"""

from __future__ import annotations

import hashlib
import json

import numpy as np

from .nn import RunningNorm

CHECKPOINT_VERSION = 1


def save_checkpoint(path, policy_params: dict, value_params: dict,
                    normalizer: RunningNorm, meta: dict) -> str:
    """Write a checkpoint; returns the content hash stored in ``meta``."""
    arrays = {}
    for k, v in policy_params.items():
        arrays[f"policy/{k}"] = v
    for k, v in value_params.items():
        arrays[f"value/{k}"] = v
    arrays["norm/count"] = np.array(normalizer.count)
    arrays["norm/mean"] = normalizer.mean
    arrays["norm/m2"] = normalizer.m2
    digest = _hash_arrays(arrays)
    meta = dict(meta, format_version=CHECKPOINT_VERSION, content_hash=digest)
    arrays["meta_json"] = np.array(json.dumps(meta, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return digest


def load_checkpoint(path):
    """Returns (policy_params, value_params, normalizer, meta)."""
    with np.load(path, allow_pickle=False) as z:
        meta = json.loads(str(z["meta_json"]))
        policy, value = {}, {}
        norm = {}
        for k in z.files:
            if k.startswith("policy/"):
                policy[k.split("/", 1)[1]] = z[k].copy()
            elif k.startswith("value/"):
                value[k.split("/", 1)[1]] = z[k].copy()
            elif k.startswith("norm/"):
                norm[k.split("/", 1)[1]] = z[k].copy()
    normalizer = RunningNorm(float(norm["count"]), norm["mean"], norm["m2"])
    return policy, value, normalizer, meta


def _hash_arrays(arrays: dict) -> str:
    h = hashlib.sha256()
    for k in sorted(arrays):
        h.update(k.encode())
        h.update(np.ascontiguousarray(arrays[k]).tobytes())
    return h.hexdigest()[:16]
