"""Kernel dispatcher.

Uses the compiled extension when it is importable and falls back to the numpy
implementations otherwise. Setting ``MOBILAB_PURE=1`` forces the fallback.
"""

from __future__ import annotations

import os

from . import _kernels_py

BACKEND = "python"
_impl = _kernels_py

if os.environ.get("MOBILAB_PURE", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _compiled  # type: ignore[attr-defined]
    except ImportError:  # pragma: no cover - depends on the build
        pass
    else:
        _impl = _compiled
        BACKEND = "compiled"


def get_backend(name: str | None = None):
    """Return the kernel namespace ``name`` (``"python"``/``"compiled"``) or the active one."""
    if name is None:
        return _impl
    if name == "python":
        return _kernels_py
    if name == "compiled":
        from . import _kernels as mod  # type: ignore[attr-defined]

        return mod
    raise ValueError(f"unknown backend {name!r}")


def group_means(values, codes, n_groups):
    """Per-group column means; ``codes`` must lie in ``[0, n_groups)``."""
    return _impl.group_means(values, codes, n_groups)


def group_demean(values, codes, n_groups):
    """Subtract group means from each row (returns a new array)."""
    return _impl.group_demean(values, codes, n_groups)


def group_logsumexp(values, codes, n_groups):
    """Numerically stable ``log(sum(exp(v)))`` per group."""
    return _impl.group_logsumexp(values, codes, n_groups)


def cd_gram(gram, xty, beta, l1, l2, tol, max_iter):
    """Covariance-update coordinate descent; see ``_kernels_py.cd_gram``."""
    return _impl.cd_gram(gram, xty, beta, l1, l2, float(tol), int(max_iter))
