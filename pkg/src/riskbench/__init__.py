"""Hospital risk-prediction benchmark: cohort building, contact networks, tabular deep models and attribution."""

__version__ = "0.1.0"
