"""OpenTelemetry instrumentation for pipeline stages.

Spans never feed back into reports; with ``ENABLE_TELEMETRY`` unset every
``trace_operation`` block runs untraced.
"""

from __future__ import annotations

import json
import logging
import os
from collections.abc import Sequence
from contextlib import contextmanager
from contextvars import ContextVar
from pathlib import Path
from typing import Any

from opentelemetry import trace
from opentelemetry.exporter.otlp.proto.grpc._log_exporter import OTLPLogExporter
from opentelemetry.exporter.otlp.proto.grpc.trace_exporter import OTLPSpanExporter
from opentelemetry.sdk._logs import LoggerProvider, LoggingHandler
from opentelemetry.sdk._logs.export import BatchLogRecordProcessor
from opentelemetry.sdk.resources import Resource
from opentelemetry.sdk.trace import ReadableSpan, TracerProvider
from opentelemetry.sdk.trace.export import BatchSpanProcessor, SpanExporter, SpanExportResult

logger = logging.getLogger(__name__)

DEFAULT_SERVICE_NAME = "factorlab"
DEFAULT_SPAN_FILE = "factorlab-spans.json"

_tracer: trace.Tracer | None = None
_run_context: ContextVar[dict[str, Any]] = ContextVar("factorlab_run_context", default={})


def span_record(span: ReadableSpan) -> dict[str, Any]:
    """Flat JSON record of a finished span; times in ns, duration in ms."""
    start, end = span.start_time, span.end_time
    return {
        "name": span.name,
        "start_time": start,
        "end_time": end,
        "duration_ms": (end - start) / 1_000_000 if start is not None and end is not None else None,
        "status": span.status.status_code.name if span.status is not None else None,
        "attributes": dict(span.attributes or {}),
    }


class FileSpanExporter(SpanExporter):
    """Append spans to a JSON array on disk; the array is closed on shutdown."""

    def __init__(self, file_path: str | Path):
        self.file_path = Path(file_path)
        self.file_path.parent.mkdir(parents=True, exist_ok=True)
        self.file_path.write_text("[\n")
        self._written = 0

    def export(self, spans: Sequence[ReadableSpan]) -> SpanExportResult:
        chunks = []
        for span in spans:
            chunks.append((",\n" if self._written else "") + json.dumps(span_record(span), indent=2))
            self._written += 1
        try:
            with self.file_path.open("a") as f:
                f.write("".join(chunks))
        except OSError as e:
            logger.error(f"Failed to export {len(chunks)} span(s) to {self.file_path}: {e}")
            return SpanExportResult.FAILURE
        return SpanExportResult.SUCCESS

    def shutdown(self) -> None:
        try:
            with self.file_path.open("a") as f:
                f.write("\n]\n")
        except OSError as e:
            logger.debug(f"Could not close span file {self.file_path}: {e}")


def telemetry_enabled() -> bool:
    return os.environ.get("ENABLE_TELEMETRY", "false").lower() == "true"


def _tracer_provider(resource: Resource, otlp_endpoint: str | None, span_file: str) -> TracerProvider:
    provider = TracerProvider(resource=resource)
    if otlp_endpoint:
        provider.add_span_processor(BatchSpanProcessor(OTLPSpanExporter(endpoint=otlp_endpoint, insecure=True)))
        logger.info(f"✓ Spans exported to OTLP endpoint {otlp_endpoint}")
    provider.add_span_processor(BatchSpanProcessor(FileSpanExporter(span_file)))
    logger.info(f"✓ Spans written to {span_file}")
    return provider


def _forward_logs(resource: Resource, otlp_endpoint: str | None) -> None:
    logger_provider = LoggerProvider(resource=resource)
    if otlp_endpoint:
        logger_provider.add_log_record_processor(BatchLogRecordProcessor(OTLPLogExporter(endpoint=otlp_endpoint, insecure=True)))
    logging.getLogger().addHandler(LoggingHandler(level=logging.INFO, logger_provider=logger_provider))
    logger.info("✓ Log records forwarded to OpenTelemetry")


def setup_telemetry(service_name: str = DEFAULT_SERVICE_NAME) -> None:
    """
    Configure tracing for the pipeline stages of this process.

    Environment variables:
    - ENABLE_TELEMETRY: "true" to trace (default: false)
    - OTEL_EXPORTER_OTLP_ENDPOINT: OTLP gRPC endpoint for spans and logs (optional)
    - OTEL_SERVICE_NAME: service name on spans (default: factorlab)
    - OTEL_FILE_EXPORT: local span file (default: ./factorlab-spans.json)
    """
    global _tracer

    if not telemetry_enabled():
        logger.debug("Telemetry disabled (set ENABLE_TELEMETRY=true to trace pipeline stages)")
        return

    try:
        resource = Resource(attributes={"service.name": os.environ.get("OTEL_SERVICE_NAME", service_name)})
        otlp_endpoint = os.environ.get("OTEL_EXPORTER_OTLP_ENDPOINT")
        span_file = os.environ.get("OTEL_FILE_EXPORT", str(Path.cwd() / DEFAULT_SPAN_FILE))

        trace.set_tracer_provider(_tracer_provider(resource, otlp_endpoint, span_file))
        _tracer = trace.get_tracer(__name__)
        _forward_logs(resource, otlp_endpoint)
    except Exception as e:
        logger.warning(f"Failed to initialize OpenTelemetry: {e}. Runs continue untraced.")


def get_tracer() -> trace.Tracer | None:
    return _tracer


@contextmanager
def run_context(**attributes: Any):
    """Attach run-level attributes such as seed and run name to every span opened inside the block."""
    token = _run_context.set({**_run_context.get(), **attributes})
    try:
        yield
    finally:
        _run_context.reset(token)


def enter_stage(stage: str) -> str:
    """Record the pipeline stage for later spans and return it."""
    _run_context.set({**_run_context.get(), "stage": stage})
    return stage


def context_attributes() -> dict[str, Any]:
    return {f"factorlab.{key}": value for key, value in _run_context.get().items()}


@contextmanager
def trace_operation(operation_name: str, attributes: dict[str, Any] | None = None):
    """
    Span around one pipeline stage; yields None when telemetry is off.

    Spans opened inside ``run_context`` also carry its attributes under the
    ``factorlab.`` prefix, with the current stage as ``factorlab.stage``.

    Usage:
        with trace_operation("blocks.build_1d", {"target_blocks": 32}) as span:
            ...
            if span:
                span.set_attribute("blocks", 32)
    """
    tracer = get_tracer()
    if tracer is None:
        yield None
        return

    merged = {**context_attributes(), **(attributes or {})}
    with tracer.start_as_current_span(operation_name) as span:
        if merged:
            span.set_attributes(merged)
        try:
            yield span
        except Exception as e:
            span.record_exception(e)
            span.set_status(trace.Status(trace.StatusCode.ERROR, str(e)))
            raise
