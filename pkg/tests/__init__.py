"""sparse-mud test suite."""
