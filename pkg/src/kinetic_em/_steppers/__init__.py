"""Stepping-kernel backend selection.

The compiled Cython core is preferred when the extension built; the pure
NumPy fallback is numerically interchangeable (identical operation order,
erf provider may differ in the last bit).  Set KINETIC_EM_BACKEND to
"compiled", "numpy" or "auto" (default) to override.
"""

import os

from ._numpy import (
    KIND_CONSTANT,
    KIND_LINEAR_FRICTION,
    KIND_SIGN_VELOCITY,
    KIND_ZERO,
)
from ._numpy import step_closed_form as _numpy_step

try:
    from ._core import step_closed_form as _compiled_step
except ImportError:
    _compiled_step = None

_choice = os.environ.get("KINETIC_EM_BACKEND", "auto").strip().lower()
if _choice in ("", "auto"):
    _selected = _compiled_step if _compiled_step is not None else _numpy_step
elif _choice == "compiled":
    if _compiled_step is None:
        raise ImportError(
            "KINETIC_EM_BACKEND=compiled but the extension is not built; "
            "reinstall with a working C toolchain or use KINETIC_EM_BACKEND=numpy"
        )
    _selected = _compiled_step
elif _choice == "numpy":
    _selected = _numpy_step
else:
    raise ImportError(f"KINETIC_EM_BACKEND must be auto, compiled or numpy, not {_choice!r}")

step_closed_form = _selected


def backend_name() -> str:
    return "compiled" if _selected is _compiled_step else "numpy"


def available_backends() -> dict:
    """Name -> stepping callable, for parity tests and benchmarks."""
    out = {"numpy": _numpy_step}
    if _compiled_step is not None:
        out["compiled"] = _compiled_step
    return out


__all__ = [
    "step_closed_form",
    "backend_name",
    "available_backends",
    "KIND_ZERO",
    "KIND_CONSTANT",
    "KIND_LINEAR_FRICTION",
    "KIND_SIGN_VELOCITY",
]
