"""Joint entity and relation extraction with two seq2seq decoders.

The package pairs a shared char-CNN + Bi-LSTM sentence encoder with either
a word-level decoder (masked-softmax copying of source tokens) or a
pointer-network decoder that emits one relation tuple per step.
"""

__version__ = "0.1.0"
