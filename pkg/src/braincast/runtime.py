"""Thread-count control for reproducible runs.

``BRAINCAST_THREADS`` caps BLAS worker threads. ``0`` (the default when the
variable is unset) selects single-threaded deterministic mode, in which
wall-clock timings are kept out of the training log so repeated runs write
byte-identical files.
"""

import contextlib
import os

from threadpoolctl import threadpool_limits

ENV_VAR = "BRAINCAST_THREADS"


def requested_threads() -> int:
    raw = os.environ.get(ENV_VAR, "0").strip() or "0"
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{ENV_VAR} must be an integer, got {raw!r}") from None
    return max(n, 0)


def deterministic() -> bool:
    return requested_threads() == 0


@contextlib.contextmanager
def thread_limit(n=None):
    n = requested_threads() if n is None else n
    with threadpool_limits(limits=max(n, 1)):
        yield
