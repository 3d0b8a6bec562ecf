"""Black-box adversarial rewriting of spam against a naive Bayes filter.

A policy encoder-decoder, initialised from a pretrained autoencoder
(the judge), is trained with REINFORCE to rewrite spam so the target
filter's ham confidence rises while the judge's sentence embedding of the
rewrite stays close to the original's.
"""

from .errors import (CheckpointError, ConfigError, DancerError, DataError, InputError, QueryError, TrainingError,
                     UsageError)

__version__ = "0.1.0"
