"""shuttlelab: deterministic V2X shuttle, infrastructure, and dataset lab."""

__version__ = "0.1.0"
