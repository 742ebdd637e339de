import pytest
from opentelemetry import trace

from varsel.sv_core import Model, SvState


@pytest.fixture(scope="session", autouse=True)
def cleanup_otel():
    """Ensure OpenTelemetry tracer provider is properly shut down after tests."""
    yield
    # Shutdown the tracer provider to stop background threads
    tracer_provider = trace.get_tracer_provider()
    if hasattr(tracer_provider, "shutdown"):
        tracer_provider.shutdown()


@pytest.fixture
def xy_model():
    """Four observed BSVs X0..X3 and a target Y, all starting Inactive."""
    model = Model()
    for name in ("X0", "X1", "X2", "X3", "Y"):
        model.add_bsv(name)
    return model


@pytest.fixture
def observe():
    """Build an id-keyed observation dict from names set Active; the rest are Inactive."""

    def build(model, *active):
        ids = {model.id_of(name) for name in active}
        return {
            bsv_id: SvState.ACTIVE if bsv_id in ids else SvState.INACTIVE
            for bsv_id in model.bsvs
        }

    return build
