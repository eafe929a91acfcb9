"""Matched autoregressive vs masked-diffusion language models on a numpy autodiff core."""

from .corpus import EOS, MASK, PAD, VOCAB_SIZE, load_corpus, tokenize
from .model import ModelConfig, Transformer, count_params, preset
from .sampler import GenerationConfig, ar_generate, mdlm_generate
from .train import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "EOS",
    "MASK",
    "PAD",
    "VOCAB_SIZE",
    "GenerationConfig",
    "ModelConfig",
    "TrainConfig",
    "Transformer",
    "ar_generate",
    "count_params",
    "load_corpus",
    "mdlm_generate",
    "preset",
    "tokenize",
    "train",
]
