"""Subword-aware recurrent language models with reusable weights.

A small, numpy-backed toolkit for word-level LSTM language models whose
input (and optionally output) word embeddings are composed from subword
units: characters through a convolutional encoder, syllables through
concatenation, or morphemes through summation.  The output projection can
reuse any prefix (or arbitrary subset) of the input embedding network's
layers by sharing parameter storage, which is the main object of study
here: it shrinks models and, for some unit types, improves perplexity.
"""

__version__ = "0.1.0"

from sublm.errors import ConfigError, DataError, NumericError, SublmError

__all__ = [
    "ConfigError",
    "DataError",
    "NumericError",
    "SublmError",
    "__version__",
]
