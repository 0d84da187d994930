"""Floor-plan localisation from panoramic depth via a learned layout space."""

__version__ = "0.1.0"
