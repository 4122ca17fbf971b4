"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-Python twin is
the fallback. ``ASYMLORA_BACKEND`` overrides the choice:

* ``auto`` (default) - compiled if available, else python
* ``compiled``       - require the extension, fail loudly if missing
* ``python``         - force the fallback (useful for debugging/benchmarks)

Both backends produce bit-identical results; they differ only in speed.
"""

import os

from . import _pykernels

_choice = os.environ.get("ASYMLORA_BACKEND", "auto").strip().lower()

if _choice in ("", "auto"):
    try:
        from . import _ckernels as kernels
    except ImportError:
        kernels = _pykernels
elif _choice == "compiled":
    from . import _ckernels as kernels
elif _choice == "python":
    kernels = _pykernels
else:
    raise ImportError(
        f"ASYMLORA_BACKEND={_choice!r} not recognized (use auto, compiled, or python)"
    )

BACKEND_NAME: str = kernels.NAME
