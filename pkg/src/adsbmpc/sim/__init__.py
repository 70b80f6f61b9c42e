"""Closed-loop traffic simulation."""
