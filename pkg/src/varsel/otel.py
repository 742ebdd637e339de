import os

from opentelemetry import trace
from opentelemetry.exporter.otlp.proto.http.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, ConsoleSpanExporter

from .errors import VarselError


class VarselOtelError(VarselError):
    """Base exception for varsel OpenTelemetry configuration errors."""

    pass


class ExporterConfigurationError(VarselOtelError):
    """Raised when exporter configuration is invalid."""

    pass


EXPORTERS = ("none", "console", "otlp")

# Module-level configuration storage for programmatic configuration
_config = {
    "run_id": None,
    "exporter": None,
    "endpoint": None,
    "api_key": None,
}


def configure_varsel(
    run_id: str = None,
    exporter: str = None,
    endpoint: str = None,
    api_key: str = None,
):
    """Configure varsel tracing programmatically.

    Values passed here take precedence over environment variables. Pass None to leave
    a value untouched.

    Args:
        run_id: Identifier attached to every span as the ``run.id`` resource attribute
                (falls back to VARSEL_RUN_ID, then ``"local"``).
        exporter: One of ``"none"``, ``"console"`` or ``"otlp"``
                  (falls back to VARSEL_TRACE_EXPORTER, then ``"none"``).
        endpoint: OTLP HTTP endpoint, required for the ``otlp`` exporter
                  (falls back to VARSEL_OTEL_EXPORTER_OTLP_ENDPOINT).
        api_key: Optional bearer token for the OTLP endpoint
                 (falls back to VARSEL_OTEL_API_KEY).

    Example:
        ```python
        from varsel import configure_varsel

        configure_varsel(run_id="fsm-seed-3", exporter="console")
        ```

    Note:
        Calling configure_varsel() resets an already-initialized tracer so that it is
        rebuilt with the new configuration on first use.
    """
    global _config, _varsel_tracer

    if run_id is not None:
        _config["run_id"] = run_id
    if exporter is not None:
        _config["exporter"] = exporter
    if endpoint is not None:
        _config["endpoint"] = endpoint
    if api_key is not None:
        _config["api_key"] = api_key

    # Reset tracer so it reinitializes with new config
    _varsel_tracer = None


def _create_resource():
    """Create and return a Resource identifying the run."""
    run_id = _config["run_id"] or os.getenv("VARSEL_RUN_ID", "local")
    return Resource.create({"service.name": "varsel", "run.id": run_id})


def _create_exporter():
    """Create the span exporter selected by config, or None when tracing is not exported."""
    name = (_config["exporter"] or os.getenv("VARSEL_TRACE_EXPORTER", "none")).lower()
    if name not in EXPORTERS:
        raise ExporterConfigurationError(
            f"Unknown trace exporter {name!r}; expected one of {', '.join(EXPORTERS)}."
        )

    if name == "none":
        return None
    if name == "console":
        return ConsoleSpanExporter()

    endpoint = _config["endpoint"] or os.getenv("VARSEL_OTEL_EXPORTER_OTLP_ENDPOINT")
    if not endpoint:
        raise ExporterConfigurationError(
            "VARSEL_OTEL_EXPORTER_OTLP_ENDPOINT is required for the otlp exporter. "
            "Set it via configure_varsel() or the environment variable."
        )

    kwargs = {"endpoint": endpoint}
    api_key = _config["api_key"] or os.getenv("VARSEL_OTEL_API_KEY")
    if api_key:
        kwargs["headers"] = {"Authorization": f"Bearer {api_key}"}
    return OTLPSpanExporter(**kwargs)


# Global variables for lazy initialization
_varsel_tracer = None


def get_varsel_tracer():
    """Get the varsel tracer, initializing it if necessary."""
    global _varsel_tracer

    if _varsel_tracer is not None:
        return _varsel_tracer

    provider = TracerProvider(resource=_create_resource())
    exporter = _create_exporter()
    if exporter is not None:
        provider.add_span_processor(BatchSpanProcessor(exporter))

    trace.set_tracer_provider(provider)
    _varsel_tracer = provider.get_tracer("varsel-tracer")

    return _varsel_tracer


class _LazyTracer:
    def __getattr__(self, name):
        tracer = get_varsel_tracer()
        return getattr(tracer, name)


varsel_tracer = _LazyTracer()
