"""Deep-transition recurrent sequence-to-sequence toolkit.

A desk-scale library implementing gated recurrent cells with deep
hidden-to-hidden transitions (L-GRU bottoms, T-GRU stacks), a
bidirectional deep-transition encoder, a two-stage deep-transition
decoder joined by multi-head additive attention, and the training and
beam-search machinery around them, all on a self-contained float64
autodiff engine.
"""

from .attention import AdditiveAttention, Annotations
from .cells import GRUCell, LGRUCell, TGRUCell, count_params
from .model import ModelConfig, Seq2SeqModel, positional_encoding, uniform_depth_config
from .tensor import Tape, Tensor
from .training import TrainConfig, gradient_check, lr_schedule, train_loop
from .transition import BiEncoder, ShallowBlock, TransitionBlock, decoder_step

__version__ = "0.1.0"

__all__ = [
    "AdditiveAttention",
    "Annotations",
    "BiEncoder",
    "GRUCell",
    "LGRUCell",
    "ModelConfig",
    "Seq2SeqModel",
    "ShallowBlock",
    "TGRUCell",
    "Tape",
    "Tensor",
    "TrainConfig",
    "TransitionBlock",
    "count_params",
    "decoder_step",
    "gradient_check",
    "lr_schedule",
    "positional_encoding",
    "train_loop",
    "uniform_depth_config",
    "__version__",
]
