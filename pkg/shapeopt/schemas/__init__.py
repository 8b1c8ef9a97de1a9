# Pydantic models for run configuration, histories and reports
