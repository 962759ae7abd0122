"""Kernel backend selection.

The compiled extension is preferred when importable; the numpy fallback is
always available. ``NETVB_KERNEL=python`` forces the fallback and
``NETVB_KERNEL=compiled`` insists on the extension (raising if it was not
built). Both backends implement the same contract and agree to float
rounding; ``BACKEND`` names the one in use.
"""

from __future__ import annotations

import os

from . import _kernels_py

_requested = os.environ.get("NETVB_KERNEL", "").strip().lower()

if _requested in {"python", "py"}:
    _impl = _kernels_py
    BACKEND = "python"
elif _requested in {"", "compiled", "c"}:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        if _requested:
            raise ImportError(
                "NETVB_KERNEL=compiled but the netvb._kernels extension is not built"
            ) from None
        _impl = _kernels_py
        BACKEND = "python"
else:
    raise ValueError(f"NETVB_KERNEL must be 'compiled' or 'python', got {_requested!r}")

fused_resp_moments = _impl.fused_resp_moments

__all__ = ["BACKEND", "fused_resp_moments"]
