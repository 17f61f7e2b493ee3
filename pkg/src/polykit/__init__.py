"""Bounding-polygon detection toolkit: label rewriting audits, polar polygon
encoding, anchor clustering, feature aggregation, losses and evaluation."""

__version__ = "0.1.0"
