"""Kernel backend selection.

The compiled extension is preferred when importable; REASONER_KERNELS=py
forces the NumPy fallback, REASONER_KERNELS=c demands the extension.  The
choice is fixed at import so a process always runs one backend.
"""

import os

_choice = os.environ.get("REASONER_KERNELS", "").strip().lower()

if _choice in ("", "c", "compiled"):
    try:
        from . import _ckernels as K
    except ImportError:
        if _choice:
            raise ImportError(
                "REASONER_KERNELS=c requested but reasoner._ckernels is not "
                "built; reinstall with a C compiler or unset the variable"
            )
        from . import _pykernels as K
elif _choice in ("py", "python"):
    from . import _pykernels as K
else:
    raise ValueError(f"REASONER_KERNELS must be 'c' or 'py', got {_choice!r}")

BACKEND = K.BACKEND
