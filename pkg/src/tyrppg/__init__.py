"""Remote heart-rate estimation from video, self-contained and desk-scale.

Pipeline: normalized frame differences + an attention-masked appearance
stream feed a stack of gated 3D-conv video blocks with temporal channel
shifting; supervision combines cross-entropy over HR bins, negative Pearson
correlation on the BVP trace, and an MMD between PSD-anchored distributions.
Everything differentiable runs on the package's own reverse-mode tensor
engine and is verified against finite differences.
"""

from . import autodiff, containers, losses, model, preprocess, signal, synth, train, verification
from .autodiff import Tensor, backward, grad_check
from .losses import KernelConfig, LossWeights, csl, kl_divergence, mmd2, pearson_loss, video_mmd_loss, wsl
from .model import ModelConfig, TyrppgParams, forward, init_params
from .preprocess import VideoClip, normalized_frame_diff
from .signal import DEFAULT_GRID, HrBinGrid, bandpass, estimate_hr, max_gaussian, metrics, periodogram
from .synth import SynthConfig, synth_dataset
from .train import Adam, TrainConfig, ablation, evaluate
from .train import train as train_model

__version__ = "0.1.0"
