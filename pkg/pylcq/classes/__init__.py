"""
Data classes: computation graphs, configurations, codebook parameters and quantized artifacts.
"""
