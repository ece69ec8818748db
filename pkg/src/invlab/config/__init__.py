"""Experiment configuration: schemas, YAML reading and typed views."""
