"""Run independent experiment cells serially or across worker processes."""

from __future__ import annotations

import logging
from collections.abc import Callable, Sequence
from concurrent.futures import ProcessPoolExecutor
from typing import TypeVar

logger = logging.getLogger(__name__)

C = TypeVar("C")
R = TypeVar("R")


def run_cells(fn: Callable[[C], R], cells: Sequence[C], workers: int = 1) -> list[R]:
    """Apply ``fn`` to every cell; results come back in cell order whatever the worker count."""
    if workers <= 1 or len(cells) <= 1:
        return [fn(cell) for cell in cells]
    logger.info("running %d cells on %d workers", len(cells), workers)
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, cells))
