"""
GNCformer: enhanced self-attention with recursive gated convolution.
"""

__version__ = '0.1.0'
