"""sciconv: turn an uploaded code+data archive into a portable, re-runnable
container package through a short guided conversation."""

__version__ = "0.1.0"
