"""Desk-scale NMT toolkit: one shared encoder, asymmetric forward/reverse
decoders trained jointly, and split-point merging of the two hypotheses."""

__version__ = "0.1.0"

from .tensor import Tensor, Tape, NumericsError, no_grad, grad_check
from .model import ModelConfig, BidirModel, init_model, make_train_batch, forward_pass, joint_loss
from .decoding import Hypothesis, MergedTranslation, greedy_decode, beam_decode, merge_by_score, merge_midpoint, translate
from .data import Vocab, ParallelCorpus, build_vocab, load_parallel_tsv, length_bucket, gen_synthetic
from .metrics import BleuScore, BucketReport, sentence_bleu, corpus_mean_bleu, bucket_report
from .training import adam_step, lr_schedule, early_stop_update, train, save_checkpoint, load_checkpoint
