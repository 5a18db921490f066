"""Query entailment engine and test lab for the description logic S."""

__version__ = "0.1.0"
