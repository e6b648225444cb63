"""Kernel backend selection.

The compiled ``otmdr._core`` extension is used when it imports; otherwise the
numpy fallback. Setting ``OTMDR_PURE_PYTHON=1`` forces the fallback.
"""

import os

from otmdr import _fallback

BACKEND = "python"
_impl = _fallback

if os.environ.get("OTMDR_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from otmdr import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:  # pragma: no cover - depends on build
        _impl = _fallback

splitmix_block = _impl.splitmix_block
uniform_block = _impl.uniform_block
normal_block = _impl.normal_block
pairwise_sum = _impl.pairwise_sum
softmax_xent = _impl.softmax_xent

__all__ = [
    "BACKEND",
    "splitmix_block",
    "uniform_block",
    "normal_block",
    "pairwise_sum",
    "softmax_xent",
]
