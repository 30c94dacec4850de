"""Camera-only fallback maneuver stack for small autonomous surface vessels."""

__version__ = "0.1.0"
