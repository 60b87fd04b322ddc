"""Multi-agent emergency decision-making under spreading incidents."""

__version__ = "0.1.0"
