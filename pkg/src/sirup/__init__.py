"""Ambisonic steering-vector estimation, localization, beamforming and neural upmixing."""

__version__ = "0.1.0"
