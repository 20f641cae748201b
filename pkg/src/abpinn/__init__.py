"""Adaptive-basis physics-informed neural networks.

PINN training with learnable RBF-windowed domain decomposition, a global
network, residual-proportional on-the-fly subdomain addition, and six
benchmark PDE problems with analytic or pseudo-spectral references.
"""

from __future__ import annotations


def _tune_runtime():
    """Single-threaded BLAS and heap-served big blocks.

    Training touches thousands of small matrices per iteration: BLAS thread
    pools oversubscribe the CPU, and glibc's default mmap threshold makes
    every batch-sized array a fresh mmap/munmap pair.  Both effects dominate
    runtime if left on.
    """
    try:
        import threadpoolctl

        threadpoolctl.threadpool_limits(1)
    except Exception:
        pass
    try:
        import ctypes

        libc = ctypes.CDLL("libc.so.6")
        libc.mallopt(-3, 1 << 30)  # M_MMAP_THRESHOLD
    except Exception:
        pass


_tune_runtime()
