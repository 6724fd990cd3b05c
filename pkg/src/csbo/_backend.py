"""Kernel backend selection.

The compiled ``csbo._core`` module is used when importable; otherwise the
pure-Python ``csbo._fallback`` module is used. Set ``CSBO_PURE_PYTHON=1`` to
force the fallback.
"""
import importlib
import os

KERNEL_NAMES = (
    "linear_epoch",
    "linear_neumann",
    "logistic_epoch",
    "logistic_neumann",
    "newsvendor_epoch",
    "newsvendor_neumann",
)


def load(name):
    """Return the kernel module for ``name`` in {"cython", "python"}."""
    if name == "cython":
        return importlib.import_module("csbo._core")
    if name == "python":
        return importlib.import_module("csbo._fallback")
    raise ValueError(f"unknown backend {name!r}")


def _select():
    if os.environ.get("CSBO_PURE_PYTHON", "") not in ("", "0"):
        return "python", load("python")
    try:
        return "cython", load("cython")
    except ImportError:
        return "python", load("python")


BACKEND, kernels = _select()


def set_backend(name):
    """Switch the kernels used by the built-in problems; returns the old name."""
    global BACKEND, kernels
    old = BACKEND
    kernels = load(name)
    BACKEND = name
    return old
