"""Deterministic testbed for federated MEC: third-party authentication and
application-state mobility across operators through a transparent proxy."""

__version__ = "0.1.0"
