# Pydantic models for plans, conditions, traces and scores
