"""Re-compression based JPEG forgery detection and localization.

Pipeline: simulate JPEG compression in the pixel domain, synthesize
single/double-compressed corpora and forged test images, extract 19x7
DCT-neighborhood features per 32x32 window, train a small CNN from
scratch, and produce 8x8-unit forgery localization maps and metrics.
"""

__version__ = "0.1.0"
