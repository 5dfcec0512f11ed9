"""Level-set posterior sampling for classifier inspection."""

__version__ = "0.1.0"
