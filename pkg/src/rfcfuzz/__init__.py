"""Grammar extraction from RFC text and grammar-guided protocol fuzzing."""

__version__ = "0.1.0"
