"""Bundled desk-scale tasks that exercise the full evolution loop offline."""
