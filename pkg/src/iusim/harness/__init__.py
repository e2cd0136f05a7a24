"""Desk-scale studies: curation, sensitivity, degradation and downstream probes."""
