"""Hourly traffic-flux analytics and LSTM forecasting on a synthetic induction-loop network."""
from .errors import TrafficFluxError
from .network import Direction, Network, NetworkConfig, RoadSegment, build_synthetic_network, segments_within

__all__ = [
    "Direction",
    "Network",
    "NetworkConfig",
    "RoadSegment",
    "TrafficFluxError",
    "build_synthetic_network",
    "segments_within",
]
__version__ = "0.1.0"
