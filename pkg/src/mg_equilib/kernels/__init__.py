"""Rollout kernel with backend selection at import.

The compiled extension is used when it was built; otherwise, or when the
environment variable ``MG_EQUILIB_PURE=1`` is set, the pure-Python fallback is
used.  Both produce identical samples for identical arguments.
"""

from __future__ import annotations

import os

from . import _rollout_py

if os.environ.get("MG_EQUILIB_PURE", "") not in ("", "0"):
    _compiled = None
else:
    try:
        from . import _rollout as _compiled
    except ImportError:  # extension not built
        _compiled = None

BACKEND = "compiled" if _compiled is not None else "python"
rollout_batch = _compiled.rollout_batch if _compiled is not None else _rollout_py.rollout_batch
python_rollout_batch = _rollout_py.rollout_batch
compiled_rollout_batch = _compiled.rollout_batch if _compiled is not None else None

__all__ = ["BACKEND", "rollout_batch", "python_rollout_batch", "compiled_rollout_batch"]
