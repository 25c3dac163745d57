"""Hebbian meta-learning with shared plasticity rules."""
