"""Partition/resource co-optimizer and simulators for pipelined serverless training."""

__version__ = "0.1.0"
