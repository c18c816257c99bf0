"""Excitation Backprop attention maps for small CNNs, with a Markov-chain oracle and evaluation tools."""

from .errors import *  # noqa: F401,F403
from .excitation import (AttentionMap, MWPField, TopDownSignal, combine_maps,
                         contrastive_backprop, eb_step_affine, eb_step_concat, eb_step_lrn,
                         eb_step_maxpool, eb_step_relu, excitation_backprop,
                         mwp_to_attention_map, propagate_layers)
from .netgraph import (ActivationCache, LayerSpec, ModelBundle, build_model, class_signal,
                       forward, load_model, read_model, save_model)
from .oracle import (ChainModel, build_chain, cross_check, expected_visits, neumann_visits,
                     sample_winner_paths)

__version__ = "0.1.0"
