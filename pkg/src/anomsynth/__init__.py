"""Synthesis of abnormal surveillance frames and a Monte-Carlo dropout discriminator.

The pipeline has two halves.  The synthesis half segments moving objects with
a sample-based background model, learns a cleaner segmenter from those noisy
masks, and relocates objects into regions that have witnessed motion while
filling the vacated box from a quiet cached frame.  The training half fits a
small CNN with dropout, scores the synthetic frames with repeated stochastic
passes and retrains on the subset that looks most abnormal.
"""

__version__ = "0.1.0"

NORMAL = 0
ABNORMAL = 1
LABEL_NAMES = ("normal", "abnormal")
