"""Backend selection: compiled extension when available, numpy fallback.

The environment variable ABRAHAM_BACKEND forces a choice: "compiled"
(error if the extension is missing) or "python" (ignore the extension).
Anything else, or no value, prefers the compiled module silently.

Both backends expose the same array-level entry points; the compiled one
may implement a subset, in which case the remaining names fall through to
the reference implementation.
"""

from __future__ import annotations

import os

from . import _ref

_choice = os.environ.get("ABRAHAM_BACKEND", "auto").lower()
_fast = None
if _choice in ("compiled", "c", "fast"):
    from . import _fast  # noqa: F401  (ImportError is the contract here)
elif _choice not in ("python", "ref", "numpy"):
    try:
        from . import _fast  # noqa: F401
    except ImportError:
        _fast = None

name = _fast.name if _fast is not None else _ref.name


def _pick(attr):
    if _fast is not None and hasattr(_fast, attr):
        return getattr(_fast, attr)
    return getattr(_ref, attr)


aniso_stack = _pick("aniso_stack")
potential_stack = _pick("potential_stack")
propagated_source_pair = _pick("propagated_source_pair")
propagated_gradient_source = _pick("propagated_gradient_source")
kernel_row = _pick("kernel_row")
mode_rotate = _pick("mode_rotate")
coupled_field_step = _pick("coupled_field_step")
gauss_project = _pick("gauss_project")
point_eval = _pick("point_eval")
candidate_add = _pick("candidate_add")
