# Process-wide configuration, logging and errors
