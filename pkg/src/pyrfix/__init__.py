"""Seq2seq program repair with pyramid encoders.

Word-level code tokenization, GRU and Transformer repair models whose
encoders contract the sequence between layers, four attention mechanisms,
beam-search correction, repair/throughput/memory metrics, and a
transfer-learning fault classifier.
"""

__version__ = "0.1.0"
