from .client import BrokerClient
from .core import ContextBroker
from .server import BrokerServer
from .types import (
    Attribute,
    BadPredicate,
    BadTarget,
    BrokerError,
    BrokerUnavailable,
    ContextEntity,
    GeoFilter,
    HistoricalRecord,
    IdTypeConflict,
    MalformedEntity,
    Notification,
    Subscription,
    UnknownEntity,
)

__all__ = [
    "Attribute",
    "BadPredicate",
    "BadTarget",
    "BrokerClient",
    "BrokerError",
    "BrokerServer",
    "BrokerUnavailable",
    "ContextBroker",
    "ContextEntity",
    "GeoFilter",
    "HistoricalRecord",
    "IdTypeConflict",
    "MalformedEntity",
    "Notification",
    "Subscription",
    "UnknownEntity",
]
