"""BiSIFT: binary-quantized SIFT fingerprints for image copy retrieval.

The package covers descriptor computation and binarization, distance kernels,
ratio-test matching, visual vocabularies, two-stage retrieval with re-ranking,
evaluation metrics and synthetic benchmarks.
"""

__version__ = "0.1.0"
