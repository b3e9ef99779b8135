"""numba shim: JIT the numeric kernels when available, fall back to plain Python.

Set CLOUDMPC_NO_JIT=1 to force the uncompiled path (debugging, coverage).
"""
import os

__all__ = ["njit", "JIT_ENABLED"]

JIT_ENABLED = False

if not os.environ.get("CLOUDMPC_NO_JIT"):
    try:
        from numba import njit as _numba_njit

        JIT_ENABLED = True
    except ImportError:
        _numba_njit = None

if JIT_ENABLED:

    def njit(*args, **kwargs):
        return _numba_njit(*args, **kwargs)

else:

    def njit(*args, **kwargs):
        # mirror numba's decorator-with-arguments form
        if args and callable(args[0]):
            return args[0]

        def wrap(func):
            return func

        return wrap
