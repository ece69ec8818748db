"""Experiment orchestration: single runs, probes and sweeps."""
