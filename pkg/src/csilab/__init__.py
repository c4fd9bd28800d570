"""Codebook enhancement for limited CSI feedback in FDD massive MIMO.

Modules
-------
chansim   clustered geometric channel model and dataset generation
codebook  codebooks, quantization and reconstruction
refiner   the codeword refinement network (numpy forward and backward pass)
trainer   single-side / dual-side training and closed-form oracle codebooks
sysval    cosine-similarity and zero-forcing sum-rate evaluation
lab       orchestration, reports, codebook sets; ``csilab`` CLI in :mod:`csilab.cli`
"""

from .chansim import ArrayGeometry, ChannelDataset, ScenarioConfig, generate_dataset
from .codebook import Codebook, CodebookKind, CodebookSet, generate_rvq, quantize, quantize_batch, reconstruct
from .config import ExperimentConfig, Framework, Mode, emit_config, parse_config
from .errors import (ConfigError, CsilabError, DegenerateOutputError, EvaluationFailedError, FormatError,
                     InvalidInputError, NumericFailureError, SingularMatrixError, UnknownEnvironmentError)
from .lab import EvalReport, emit_report, select_codebook
from .refiner import RefinerConfig, count_params
from .sysval import eval_cosine, eval_sumrate, paired_bootstrap_ci, sum_rate, zf_precoder
from .trainer import TrainingConfig, enhance_codebook, oracle_ds, oracle_ss, train_ds, train_ss

__version__ = "0.1.0"
