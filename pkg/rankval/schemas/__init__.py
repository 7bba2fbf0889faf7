"""Pydantic documents and configs exchanged with files and the CLI."""
