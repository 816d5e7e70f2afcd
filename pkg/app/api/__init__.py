# CLI command groups and shared options
