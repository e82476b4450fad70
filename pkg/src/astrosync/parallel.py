"""Process-pool map whose results come back in submission order."""

from concurrent.futures import ProcessPoolExecutor
import multiprocessing as mp


def ordered_map(fn, items, workers=1):
    """``[fn(x) for x in items]``, optionally spread over ``workers`` processes.

    Each job carries its own seed, so the result does not depend on
    ``workers``.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    ctx = mp.get_context("fork")
    with ProcessPoolExecutor(max_workers=min(workers, len(items)), mp_context=ctx) as ex:
        return list(ex.map(fn, items))
