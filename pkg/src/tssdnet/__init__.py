"""Raw-waveform synthetic speech detection.

End-to-end stack: a minimal reverse-mode tensor engine, the Res/Inc
TSSDNet model families, weighted cross-entropy and mixup training with
Adam, EER/DET evaluation, and WAV/protocol data handling.
"""

from .tensor import Tensor, backward, no_grad
from .models import ModelConfig, Model, build_model, build_res_tssdnet, build_inc_tssdnet, count_parameters
from .checkpoint import save_checkpoint, load_checkpoint
from .training import TrainConfig, fit, score_utterances
from .metrics import ScoreSet, compute_eer, det_points, score_from_logits
from .data import Utterance, read_wav, write_wav, align_duration, parse_protocol, synth_dataset

__version__ = "0.1.0"

__all__ = [
    "Tensor", "backward", "no_grad",
    "ModelConfig", "Model", "build_model", "build_res_tssdnet", "build_inc_tssdnet",
    "count_parameters",
    "save_checkpoint", "load_checkpoint",
    "TrainConfig", "fit", "score_utterances",
    "ScoreSet", "compute_eer", "det_points", "score_from_logits",
    "Utterance", "read_wav", "write_wav", "align_duration", "parse_protocol", "synth_dataset",
]
