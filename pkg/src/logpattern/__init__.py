"""Behavior-graph pattern extraction and autoencoder embeddings for program execution logs."""

from .autoencoder import AutoencoderModel, TrainConfig, embed_pattern, load_model, save_model, token_embedding, train
from .encoder import SparseBinaryVector, encode_pattern
from .featurizer import LogFeatureVector, featurize_log
from .graph import BehaviorGraph, build_graph
from .log_ingest import EventTypeRegistry, Label, Log, SystemEvent, build_registry, parse_log, serialize_log
from .patterns import Pattern, extract_patterns, log_patterns, pattern_signature
from .tokenizer import TokenizerSettings, Vocabulary, build_vocabulary, tokenize

__version__ = "0.1.0"
