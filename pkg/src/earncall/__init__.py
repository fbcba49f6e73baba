"""Predict next-session stock movement from earnings-call answer sentences.

Modules: `corpus` (transcripts, tokenization, vocabulary), `embeddings`
(sentence vectors), `labels` (prices and movement labels), `model`
(attention network and training), `baselines`, `evaluation` and `cli`.
"""

__version__ = "0.1.0"
