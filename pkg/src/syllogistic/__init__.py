"""Circuit discovery for syllogistic reasoning in GPT-2-family transformers."""

__version__ = "0.1.0"
