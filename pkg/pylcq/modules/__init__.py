"""
Generalized functions for building quantization workflows.
"""
