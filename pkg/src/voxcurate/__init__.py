"""Speech corpus curation and TTS evaluation toolkit.

Standardizes raw recordings, cuts them into speech segments, scores
segment quality, filters to a curated core, builds a prompt-pair
benchmark, and aggregates objective and subjective evaluation results.
"""

from .manifest import Asset, DatasetManifest, DatasetStats, Segment
from .text_metrics import normalize_text, wer_of_strings, word_error_rate

__version__ = "0.1.0"

__all__ = [
    "Asset",
    "DatasetManifest",
    "DatasetStats",
    "Segment",
    "normalize_text",
    "wer_of_strings",
    "word_error_rate",
    "__version__",
]
