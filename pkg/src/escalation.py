"""
This module provides the `escalate` decorator, which retries a numerical
routine with a doubled budget when it reports that the budget was too
small. Eigensolver Krylov sizes and Monte Carlo probe counts are both
escalated this way.
"""

import logging
from functools import wraps
from typing import Tuple, Type

logger = logging.getLogger(__name__)


class BudgetExhausted(RuntimeError):
    """
    Raised by a routine whose numerical budget was insufficient.

    :ivar detail: Best partial result, kept for error reports.
    """
    def __init__(self, message: str, detail: object = None) -> None:
        super().__init__(message)
        self.detail = detail


def escalate(
        budget: str,
        retries: int = 3,
        factor: int = 2,
        exceptions: Tuple[Type[BaseException], ...] = (BudgetExhausted,)
        ):
    """
    Retry decorator with a geometrically growing budget.

    The decorated function must accept ``budget`` as a keyword argument.
    It is called with its own default (or the caller's value); whenever it
    raises one of ``exceptions`` the budget is multiplied by ``factor`` and
    the call repeated, until ``retries`` attempts have been made. The last
    exception is then re-raised. :exc:`ValueError` always propagates
    immediately since a larger budget cannot fix invalid input.

    :param budget: Name of the keyword argument holding the budget.
    :type budget: str
    :param retries: Maximum number of attempts (default 3).
    :type retries: int
    :param factor: Multiplier applied after each failure (default 2).
    :type factor: int
    :param exceptions: Exception types that trigger an escalation.
    :raises Exception: The last failure once the attempts are used up.
    :return: The result of the decorated function call.
    :rtype: Any
    """
    def decorator(func):
        defaults = func.__kwdefaults__ or {}

        @wraps(func)
        def wrapper(*args, **kwargs):
            current = kwargs.pop(budget, defaults.get(budget))
            if current is None:
                raise TypeError(
                    f"{func.__name__} has no default for '{budget}'"
                )
            attempt = 0
            while True:
                try:
                    return func(*args, **{budget: current}, **kwargs)
                except ValueError:
                    raise
                except exceptions as e:
                    attempt += 1
                    if attempt >= retries:
                        logger.error(
                            "%s failed after %d attempts (%s=%s): %s",
                            func.__name__, attempt, budget, current, e
                        )
                        raise
                    logger.warning(
                        "%s: escalating %s from %s to %s after: %s",
                        func.__name__, budget, current,
                        current * factor, e
                    )
                    current *= factor
        return wrapper
    return decorator
