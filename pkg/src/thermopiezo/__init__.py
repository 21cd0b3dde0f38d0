"""Simulation and verification kit for incremental thermopiezoelectricity
with static finite biasing fields."""

__version__ = "0.1.0"
