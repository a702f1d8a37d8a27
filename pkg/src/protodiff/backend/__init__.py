"""Kernel backend selection.

The compiled core (`_fastcore`, Cython) is preferred when built; the numpy
reference module covers anything the core does not export and serves as the
full fallback. Set PROTODIFF_BACKEND=python or =compiled to force a choice
(the latter raises if the extension is missing).
"""

import os
import types

from . import reference


def _load(choice):
    if choice == "python":
        return reference
    try:
        from . import _fastcore
    except ImportError:
        if choice == "compiled":
            raise ImportError(
                "PROTODIFF_BACKEND=compiled but protodiff.backend._fastcore "
                "is not built; run `pip install -e .` or `python setup.py "
                "build_ext --inplace`"
            )
        return reference
    merged = types.SimpleNamespace()
    for name in dir(reference):
        if not name.startswith("_"):
            setattr(merged, name, getattr(reference, name))
    for name in dir(_fastcore):
        if not name.startswith("_"):
            setattr(merged, name, getattr(_fastcore, name))
    return merged


kernels = _load(os.environ.get("PROTODIFF_BACKEND", "auto"))


def backend_name():
    return kernels.NAME
