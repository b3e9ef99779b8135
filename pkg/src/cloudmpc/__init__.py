"""cloudmpc: deterministic simulator for cloud-scheduled centralized NMPC fleets."""

__version__ = "0.1.0"
