"""Spectral generalized energy distance with a small reverse-mode autodiff
engine and implicit generators trained by the energy score."""

from .dsp import StftConfig, Waveform, istft_overlap_add, stft_magnitude
from .estimators import EnergyScoreGenerator, MultiScaleSpectrogram, SpectralGedSynthesizer
from .ged_core import (GedLossConfig, PowerDistance, energy_score, ged_population_estimate,
                       kernel_to_distance, minibatch_ged_loss, mmd2_ustat)
from .models import IstftGenerator, LatentSampler, MlpGenerator
from .optim import Adam, Ema, TrainingDivergedError, train_step
from .spectral_distance import DistanceConfig, SpectralDistance, multiscale_distance

__version__ = "0.1.0"

__all__ = [
    "Adam", "DistanceConfig", "Ema", "EnergyScoreGenerator", "GedLossConfig",
    "IstftGenerator", "LatentSampler", "MlpGenerator", "MultiScaleSpectrogram",
    "PowerDistance", "SpectralDistance", "SpectralGedSynthesizer", "StftConfig",
    "TrainingDivergedError", "Waveform", "energy_score", "ged_population_estimate",
    "istft_overlap_add", "kernel_to_distance", "minibatch_ged_loss", "mmd2_ustat",
    "multiscale_distance", "stft_magnitude", "train_step",
]
