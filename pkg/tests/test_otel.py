import os
from unittest.mock import Mock, patch

import pytest
from opentelemetry import trace


@pytest.fixture(autouse=True)
def reset_config():
    """Clear programmatic configuration between tests."""
    from varsel.otel import _config

    for key in _config:
        _config[key] = None
    yield
    for key in _config:
        _config[key] = None


def test_tracer_creates_spans():
    """Test that the tracer can create spans."""
    from varsel.otel import varsel_tracer

    with varsel_tracer.start_as_current_span("test_span") as span:
        assert span is not None
        assert span.name == "test_span"
        span.set_attribute("test_key", "test_value")

    # Span should be ended after context exit
    assert not span.is_recording()


def test_global_tracer_provider_set():
    """Test that the global tracer provider is set once the tracer is used."""
    from varsel.otel import get_varsel_tracer

    get_varsel_tracer()
    assert not trace.get_tracer_provider().__class__.__name__ == "NoOpTracerProvider"


# Tests for _create_exporter


@patch.dict(os.environ, {}, clear=True)
def test_create_exporter_defaults_to_none():
    """Test that no exporter is created when nothing is configured."""
    from varsel.otel import _create_exporter

    assert _create_exporter() is None


@patch.dict(os.environ, {"VARSEL_TRACE_EXPORTER": "console"})
def test_create_exporter_console():
    """Test the console exporter selection from the environment."""
    from opentelemetry.sdk.trace.export import ConsoleSpanExporter

    from varsel.otel import _create_exporter

    assert isinstance(_create_exporter(), ConsoleSpanExporter)


@patch.dict(os.environ, {"VARSEL_TRACE_EXPORTER": "jaeger"})
def test_create_exporter_unknown_name():
    """Test that an unknown exporter name is rejected."""
    from varsel.otel import ExporterConfigurationError, _create_exporter

    with pytest.raises(ExporterConfigurationError, match="Unknown trace exporter 'jaeger'"):
        _create_exporter()


@patch.dict(os.environ, {"VARSEL_TRACE_EXPORTER": "otlp"}, clear=True)
def test_create_exporter_otlp_missing_endpoint():
    """Test that the otlp exporter requires an endpoint."""
    from varsel.otel import ExporterConfigurationError, _create_exporter

    with pytest.raises(
        ExporterConfigurationError, match="VARSEL_OTEL_EXPORTER_OTLP_ENDPOINT is required"
    ):
        _create_exporter()


@patch.dict(
    os.environ,
    {
        "VARSEL_TRACE_EXPORTER": "otlp",
        "VARSEL_OTEL_EXPORTER_OTLP_ENDPOINT": "http://localhost:4318/v1/traces",
        "VARSEL_OTEL_API_KEY": "test-api-key",
    },
)
@patch("varsel.otel.OTLPSpanExporter")
def test_create_exporter_otlp_from_env(mock_otlp_exporter):
    """Test that the otlp exporter picks up endpoint and key from the environment."""
    from varsel.otel import _create_exporter

    mock_exporter_instance = Mock()
    mock_otlp_exporter.return_value = mock_exporter_instance

    exporter = _create_exporter()
    assert exporter == mock_exporter_instance
    mock_otlp_exporter.assert_called_once_with(
        endpoint="http://localhost:4318/v1/traces",
        headers={"Authorization": "Bearer test-api-key"},
    )


@patch.dict(
    os.environ,
    {"VARSEL_TRACE_EXPORTER": "otlp", "VARSEL_OTEL_EXPORTER_OTLP_ENDPOINT": "http://c:4318"},
    clear=True,
)
@patch("varsel.otel.OTLPSpanExporter")
def test_create_exporter_otlp_without_key(mock_otlp_exporter):
    """Test that no Authorization header is sent without an API key."""
    from varsel.otel import _create_exporter

    _create_exporter()
    mock_otlp_exporter.assert_called_once_with(endpoint="http://c:4318")


# Tests for _create_resource


@patch.dict(os.environ, {}, clear=True)
def test_create_resource_default_run_id():
    """Test that the run id falls back to 'local'."""
    from varsel.otel import _create_resource

    resource = _create_resource()
    assert resource.attributes["service.name"] == "varsel"
    assert resource.attributes["run.id"] == "local"


@patch.dict(os.environ, {"VARSEL_RUN_ID": "fsm-seed-7"})
def test_create_resource_from_env():
    """Test that the run id is read from VARSEL_RUN_ID."""
    from varsel.otel import _create_resource

    assert _create_resource().attributes["run.id"] == "fsm-seed-7"


def test_exception_hierarchy():
    """Test that custom exceptions have proper inheritance."""
    from varsel.errors import VarselError
    from varsel.otel import ExporterConfigurationError, VarselOtelError

    assert issubclass(ExporterConfigurationError, VarselOtelError)
    assert issubclass(VarselOtelError, VarselError)

    assert str(VarselOtelError("base error")) == "base error"
    assert str(ExporterConfigurationError("exporter error")) == "exporter error"


# Tests for programmatic configuration


@patch.dict(
    os.environ,
    {
        "VARSEL_TRACE_EXPORTER": "console",
        "VARSEL_RUN_ID": "env-run",
        "VARSEL_OTEL_EXPORTER_OTLP_ENDPOINT": "http://env:4318",
    },
)
@patch("varsel.otel.OTLPSpanExporter")
def test_configure_takes_precedence_over_env_vars(mock_otlp_exporter):
    """Test that programmatic config takes precedence over environment variables."""
    from varsel.otel import _create_exporter, _create_resource, configure_varsel

    configure_varsel(
        run_id="programmatic-run",
        exporter="otlp",
        endpoint="http://programmatic:4318/v1/traces",
        api_key="programmatic-key",
    )

    _create_exporter()
    mock_otlp_exporter.assert_called_once_with(
        endpoint="http://programmatic:4318/v1/traces",
        headers={"Authorization": "Bearer programmatic-key"},
    )
    assert _create_resource().attributes["run.id"] == "programmatic-run"


@patch.dict(os.environ, {"VARSEL_RUN_ID": "env-run"})
def test_env_vars_fallback_when_not_configured():
    """Test that environment variables are used when programmatic config is not set."""
    from varsel.otel import _create_resource

    assert _create_resource().attributes["run.id"] == "env-run"


@patch.dict(os.environ, {}, clear=True)
def test_configure_resets_tracer():
    """Test that configure_varsel() resets the tracer so it reinitializes with new config."""
    from varsel.otel import configure_varsel, get_varsel_tracer

    configure_varsel(run_id="run1")
    tracer1 = get_varsel_tracer()

    configure_varsel(run_id="run2")
    tracer2 = get_varsel_tracer()

    assert tracer1 is not tracer2
