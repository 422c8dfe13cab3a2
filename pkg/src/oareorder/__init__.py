"""Surrogate-assisted GA for amplifier reconfiguration order."""
