"""Curriculum instruction tuning for a small encoder-decoder story model."""

from ._w2st import Model, bleu, load_checkpoint, rouge_l, run_cli, synth_corpus, train

__all__ = ["Model", "bleu", "load_checkpoint", "rouge_l", "run_cli", "synth_corpus", "train"]
