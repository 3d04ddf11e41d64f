"""Desk-scale urban mobility services: context broker, GTFS tooling, realtime
bridge, arrival estimation and transit routing, composable in one process."""

__version__ = "0.1.0"
