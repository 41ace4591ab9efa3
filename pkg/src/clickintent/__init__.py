"""Clickstream purchase-intent classification: sessionization, corpus
preparation, count-based and recurrent classifiers, and an evaluation harness."""

__version__ = "0.1.0"
