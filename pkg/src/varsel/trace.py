import dataclasses
import functools
import inspect
from enum import Enum
from typing import Any, Callable, Optional, Union

from opentelemetry.trace import Span, Status, StatusCode

from .otel import varsel_tracer

MAX_ATTRIBUTE_LENGTH = 1000
MAX_COLLECTION_ITEMS = 50


def varsel_trace(name: Optional[str] = None) -> Callable:
    """
    A decorator that wraps a learning or evaluation operation in a span.
    Always captures the bound arguments and the return value as span attributes.

    Args:
        name: Custom span name. If None, uses the qualified function name.

    Returns:
        Decorator function that wraps the target function with tracing.

    Example:
        @varsel_trace(name="learner.step")
        def process_environment_step(model, observations):
            ...
    """

    def decorator(func: Callable) -> Callable:
        span_name = name or f"{func.__module__}.{func.__qualname__}"

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            # record_exception=False since exceptions are recorded in the except block
            with varsel_tracer.start_as_current_span(span_name, record_exception=False) as span:
                try:
                    recording = span.is_recording()
                    if recording:
                        _set_base_attributes(span, func)
                        _capture_arguments(span, func, args, kwargs)

                    result = func(*args, **kwargs)

                    if recording:
                        _capture_return_value(span, result)
                    span.set_status(Status(StatusCode.OK))
                    return result

                except Exception as e:
                    span.record_exception(e)
                    span.set_status(Status(StatusCode.ERROR, str(e)))
                    raise

        return wrapper

    return decorator


def _set_base_attributes(span: Span, func: Callable) -> None:
    """Set base attributes on the span."""
    span.set_attribute("function.name", func.__name__)
    span.set_attribute("function.module", func.__module__)
    span.set_attribute("function.qualname", func.__qualname__)


def _capture_arguments(span: Span, func: Callable, args: tuple, kwargs: dict) -> None:
    """Capture function arguments as span attributes."""
    try:
        bound_args = inspect.signature(func).bind(*args, **kwargs)
        bound_args.apply_defaults()

        for arg_name, arg_value in bound_args.arguments.items():
            if arg_name in ("self", "cls"):
                continue
            span.set_attribute(f"function.args.{arg_name}", _serialize_attribute_value(arg_value))

    except Exception:
        # If argument capture fails, don't break the span
        span.set_attribute("function.args.capture_error", True)


def _capture_return_value(span: Span, return_value: Any) -> None:
    """Capture return value as span attribute."""
    try:
        span.set_attribute("function.return_value", _serialize_attribute_value(return_value))
    except Exception:
        span.set_attribute("function.return_value.capture_error", True)


def _serialize_attribute_value(value: Any) -> Union[str, int, float, bool]:
    """
    Serialize a value to be suitable for span attributes.
    OpenTelemetry attributes must be basic types. Dataclass records and large collections
    are summarized rather than rendered.
    """
    if isinstance(value, Enum):
        return value.name
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return f"<{type(value).__name__}>"
    if isinstance(value, (list, tuple, dict, set, frozenset)) and len(value) > MAX_COLLECTION_ITEMS:
        return f"<{type(value).__name__} of {len(value)} items>"
    if isinstance(value, str):
        return value[:MAX_ATTRIBUTE_LENGTH]
    elif isinstance(value, (int, float, bool)):
        return value
    elif value is None:
        return "None"
    elif isinstance(value, (set, frozenset)):
        try:
            value = sorted(value)
        except TypeError:
            value = list(value)
    try:
        return str(value)[:MAX_ATTRIBUTE_LENGTH]
    except Exception:
        return "<unable_to_serialize>"
