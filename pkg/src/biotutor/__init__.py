"""Biomechanics course assistant: retrieval-augmented true/false QA and a
manager/solver/reviewer agent pipeline with sandboxed code execution."""

__version__ = "0.1.0"
