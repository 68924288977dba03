"""Iterative dual domain adaptation for neural machine translation, at desk scale."""
from .adaptation import (
    CheckpointRegistry, DomainData, IddaConfig, IddaResult, idda_fix_teacher, idda_one_to_one, idda_unidir,
    mix_domains, run_baseline, run_idda,
)
from .corpus import Corpus, SynthSpec, filter_by_length, load_parallel, make_batches, synth_domain_corpus
from .decoding import DecodeConfig, beam_search, bleu, eval_model, greedy_decode, translate
from .distance import ProxyADistance, proxy_a_distance, transfer_order
from .estimators import IddaTranslator, Seq2SeqTranslator
from .model import ModelConfig, ModelParams, forward, init_model, load_params, save_params
from .reporting import plot_metrics
from .tokenization import BpeTokenizer, learn_bpe
from .training import kd_loss, nll_loss
from .transfer import TrainConfig, TransferConfig, transfer_model

__all__ = [
    "BpeTokenizer", "CheckpointRegistry", "Corpus", "DecodeConfig", "DomainData", "IddaConfig", "IddaResult",
    "IddaTranslator", "ModelConfig", "ModelParams", "ProxyADistance", "Seq2SeqTranslator", "SynthSpec",
    "TrainConfig", "TransferConfig", "beam_search", "bleu", "eval_model", "filter_by_length", "forward",
    "greedy_decode", "idda_fix_teacher", "idda_one_to_one", "idda_unidir", "init_model", "kd_loss",
    "learn_bpe", "load_params", "load_parallel", "make_batches", "mix_domains", "nll_loss", "plot_metrics",
    "proxy_a_distance", "run_baseline", "run_idda", "save_params", "synth_domain_corpus", "transfer_model",
    "transfer_order", "translate",
]
