"""Desk-scale multi-VM execution engine over one shared state tree."""
