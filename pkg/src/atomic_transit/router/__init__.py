from .graph import (
    TRANSFER_SLACK_S,
    Connection,
    Journey,
    Leg,
    TransitGraph,
    UnknownStop,
    apply_realtime,
    build_graph,
    earliest_arrival,
    merge_graphs,
)
from .service import RouterService

__all__ = [
    "TRANSFER_SLACK_S",
    "Connection",
    "Journey",
    "Leg",
    "RouterService",
    "TransitGraph",
    "UnknownStop",
    "apply_realtime",
    "build_graph",
    "earliest_arrival",
    "merge_graphs",
]
