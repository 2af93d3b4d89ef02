"""Forecast-assisted deep RL traffic signal control on a point-queue microsimulator."""

__version__ = "0.1.0"
