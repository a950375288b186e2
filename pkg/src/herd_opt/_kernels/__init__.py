"""Hot-loop kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports cleanly. Set
``HERD_OPT_PURE_PYTHON=1`` to force the fallback. ``BACKEND`` names the
implementation in use.
"""
import os

from . import _python

if os.environ.get("HERD_OPT_PURE_PYTHON", "") not in ("", "0"):
    _impl = _python
else:
    try:
        from . import _core as _impl
    except ImportError:
        _impl = _python

BACKEND = "compiled" if _impl is not _python else "python"
flow_curve = _impl.flow_curve
run_episode = _impl.run_episode

__all__ = ["BACKEND", "flow_curve", "run_episode"]
