"""Memory-kernel master equations."""
