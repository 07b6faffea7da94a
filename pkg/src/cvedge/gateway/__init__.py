"""The platform's outward face: HTTP/JSON control API with a live metrics
stream, and the headless CLI for scenario runs and sweeps."""

from .api import GatewayConfig, create_app

__all__ = ["GatewayConfig", "create_app"]
