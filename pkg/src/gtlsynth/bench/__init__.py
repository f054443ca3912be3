"""Benchmark generators and metrics."""
