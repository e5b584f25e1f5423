"""Process-level runtime knobs.

The codec's matrices are tiny (64x64-ish), where BLAS thread pools cost
more in synchronization than they save; encode/decode throughput roughly
doubles single-threaded. Entry points (CLI, test harness) call
limit_blas_threads() once; the library never changes global state on
import.
"""

from __future__ import annotations


def limit_blas_threads(n: int = 1) -> None:
    """Cap BLAS/OpenMP pools at n threads; silently a no-op if unavailable."""
    try:
        import threadpoolctl
    except ImportError:
        return
    try:
        threadpoolctl.threadpool_limits(limits=n)
    except Exception:
        pass
