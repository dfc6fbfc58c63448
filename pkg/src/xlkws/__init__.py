"""Cross-lingual keyword spotting toolkit.

Trains a convolutional speech network on soft keyword targets from a
(simulated or external) visual tagger in the query language, then ranks
search-language utterances for written query-language keywords and
evaluates the rankings (P@10, P@N, EER, pooled AP).
"""

__version__ = "0.1.0"
