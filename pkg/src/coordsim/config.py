"""Numeric tolerances and dimension caps.

Defaults are fixed so that tests pin exact behaviour; everything is
configurable per call.  The ``COORDSIM_CAPS`` environment variable raises
dimension caps without touching code: either a single integer applied to
every cap, or a comma list like ``tensor=32768,blocks=8192``.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, replace


@dataclass(frozen=True)
class Tolerances:
    tau_herm: float = 1e-9
    tau_tr: float = 1e-9
    tau_psd: float = 1e-9
    tau_num: float = 1e-7
    tau_feas: float = 1e-6


@dataclass(frozen=True)
class Caps:
    # largest Hilbert-space dimension any tensor/mixture construction may reach
    tensor_dim: int = 16384
    # protocol-level caps: classical block count, per-block quantum dim,
    # and total dim for fully-quantum (no-communication) runs
    classical_blocks: int = 4096
    block_dim: int = 256
    total_dim: int = 4096
    # codebook size guard (total symbols drawn)
    codebook_symbols: int = 1 << 22


DEFAULT_TOLERANCES = Tolerances()

_CAP_KEYS = {
    "tensor": "tensor_dim",
    "blocks": "classical_blocks",
    "block_dim": "block_dim",
    "total": "total_dim",
    "codebook": "codebook_symbols",
}


def caps_from_env(base: Caps | None = None, env: str | None = None) -> Caps:
    """Apply COORDSIM_CAPS overrides to ``base``; caps are only ever raised."""
    caps = base if base is not None else Caps()
    raw = env if env is not None else os.environ.get("COORDSIM_CAPS", "")
    raw = raw.strip()
    if not raw:
        return caps
    updates = {}
    if "=" in raw:
        for item in raw.split(","):
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in _CAP_KEYS:
                raise ValueError(f"unknown cap name in COORDSIM_CAPS: {key!r}")
            field = _CAP_KEYS[key]
            updates[field] = max(getattr(caps, field), int(val))
    else:
        value = int(raw)
        for field in _CAP_KEYS.values():
            updates[field] = max(getattr(caps, field), value)
    return replace(caps, **updates)


def default_caps() -> Caps:
    return caps_from_env(Caps())
