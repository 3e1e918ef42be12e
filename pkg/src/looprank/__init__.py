"""Loop-nest working-set analysis, schedule ranking and operator fusion."""

__version__ = "0.1.0"
