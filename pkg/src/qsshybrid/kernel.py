"""Backend selection for the residual/Jacobian assembly kernel.

The compiled Cython kernel is used when it was built; otherwise the numpy
implementation is used.  :func:`use_backend` switches explicitly (tests and
the benchmark compare both).
"""

from . import _kernel_py

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")
_active = _compiled if _compiled is not None else _kernel_py


def available_backends():
    return tuple(b for b in BACKENDS if b == "python" or _compiled is not None)


def backend():
    """Name of the active backend."""
    return "compiled" if _active is _compiled and _compiled is not None else "python"


def use_backend(name):
    """Select ``'compiled'`` or ``'python'``; returns the previous name."""
    global _active
    prev = backend()
    if name == "compiled":
        if _compiled is None:
            raise RuntimeError("compiled kernel is not built")
        _active = _compiled
    elif name == "python":
        _active = _kernel_py
    else:
        raise ValueError(f"unknown backend {name!r}")
    return prev


def evaluate(kd, U, oxl_active, want_jac=True):
    return _active.evaluate(kd, U, oxl_active, want_jac)
