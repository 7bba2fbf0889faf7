"""Core utilities: configuration-aware logging, errors, concurrency and hashing."""
