from __future__ import annotations

import functools
import inspect
import logging

from .errors import StaleTopologyError

_LOGGER = logging.getLogger(__name__)


def generation_checked(*names: str, reference: str = "mesh"):
    """Decorator to require mesh-bound arguments to match the mesh generation.

    Each argument listed in ``names`` must expose ``generation``; it is compared
    against the ``generation`` of the ``reference`` argument before the call.
    """

    def _decorate(fn):
        signature = inspect.signature(fn)

        @functools.wraps(fn)
        def _wrap(*args, **kwargs):
            bound = signature.bind(*args, **kwargs)
            expected = bound.arguments[reference].generation
            for name in names:
                value = bound.arguments.get(name)
                if value is None:
                    continue
                if value.generation != expected:
                    _LOGGER.warning(
                        "%s: argument '%s' bound to generation %s, mesh is at %s",
                        fn.__qualname__,
                        name,
                        value.generation,
                        expected,
                    )
                    raise StaleTopologyError(expected, value.generation, name)
            return fn(*args, **kwargs)

        return _wrap

    return _decorate
