from __future__ import annotations

from collections import OrderedDict
from collections.abc import Mapping
import hashlib
import math


def is_power_of_two(value: int) -> bool:
    return value >= 1 and value & (value - 1) == 0


def ceil_log2(ratio: float) -> int:
    """Smallest integer b with 2**b >= ratio (ratio > 0)."""
    b = math.ceil(math.log2(ratio))
    # log2 rounding can land one off on exact powers
    while 2.0**b < ratio:
        b += 1
    while b > 0 and 2.0 ** (b - 1) >= ratio:
        b -= 1
    return b


def config_hash(values: Mapping[str, object]) -> str:
    canonical = "\n".join(f"{key} = {values[key]}" for key in sorted(values))
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


class LimitedSizeDict(OrderedDict):
    def __init__(self, max_keys: int, *args, **kwds):
        self.size_limit = max_keys
        OrderedDict.__init__(self, *args, **kwds)
        self._check_size_limit()

    def __setitem__(self, key, value):
        OrderedDict.__setitem__(self, key, value)
        self._check_size_limit()

    def _check_size_limit(self):
        if self.size_limit is not None:
            while len(self) > self.size_limit:
                self.popitem(last=False)
