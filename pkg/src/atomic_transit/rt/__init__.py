from .bridge import BridgeService, GtfsRtBridge
from .model import (
    FULL_DATASET,
    RtEntity,
    RtFeedMessage,
    RtStopTimeUpdate,
    RtTripUpdate,
    RtVehiclePosition,
    ScheduleEntry,
    ScheduleIndex,
)
from .wire import WireError, decode_feed_dict, decode_feed_message, encode_feed_message

__all__ = [
    "BridgeService",
    "FULL_DATASET",
    "GtfsRtBridge",
    "RtEntity",
    "RtFeedMessage",
    "RtStopTimeUpdate",
    "RtTripUpdate",
    "RtVehiclePosition",
    "ScheduleEntry",
    "ScheduleIndex",
    "WireError",
    "decode_feed_dict",
    "decode_feed_message",
    "encode_feed_message",
]
