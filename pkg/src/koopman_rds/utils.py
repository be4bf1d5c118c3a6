from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Sequence, Tuple, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")


def chunk_ranges(n: int, chunk_size: int) -> List[Tuple[int, int]]:
    """Split ``range(n)`` into consecutive ``(start, stop)`` slices."""
    if chunk_size <= 0:
        raise ValueError("chunk_size must be > 0")
    return [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]


def ordered_map(
    fn: Callable[[T], R], items: Iterable[T], *, max_workers: int = 1
) -> List[R]:
    """Map `fn` over `items`, in a thread pool when ``max_workers > 1``.

    Results keep the order of `items` whatever the completion order.
    """
    items = list(items)
    if max_workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        return list(pool.map(fn, items))


def loglog_slope(x: Sequence[float], y: Sequence[float]) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    slope, _ = np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)
    return float(slope)


def normalized_correlation(a: np.ndarray, b: np.ndarray) -> float:
    """``|<a, b>| / (|a| |b|)``: agreement of two sampled functions up to a complex scalar."""
    a = np.ravel(a).astype(complex)
    b = np.ravel(b).astype(complex)
    den = np.linalg.norm(a) * np.linalg.norm(b)
    if den == 0:
        return 0.0
    return float(abs(np.vdot(a, b)) / den)
