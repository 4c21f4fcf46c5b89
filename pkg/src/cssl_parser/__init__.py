"""Graph-based dependency parsing trained to be robust to word order.

A biaffine parser over a small self-attention encoder, trained with
cross-entropy plus a contrastive loss that pulls a sentence and a random
reordering of its words together.
"""

__version__ = "0.1.0"

from .conllu import Sentence, Token, Treebank, load_conllu, parse_conllu, save_conllu, serialize_conllu, validate_tree
from .decode import BACKEND as DECODER_BACKEND
from .decode import greedy_decode, mst_decode

__all__ = [
    "DECODER_BACKEND",
    "Sentence",
    "Token",
    "Treebank",
    "greedy_decode",
    "load_conllu",
    "mst_decode",
    "parse_conllu",
    "save_conllu",
    "serialize_conllu",
    "validate_tree",
]
