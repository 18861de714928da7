"""Single-channel source separation with generative source models.

Each source gets its own model of magnitude-spectrogram frames (KL-NMF,
Poisson autoencoder, VAE, GAN, WGAN or autoencoding WGAN). At test time the
latent trajectories of both models are fitted to the mixture, and the two
estimates are turned back into audio by Wiener masking.
"""
from .errors import (ConditioningError, ConfigError, DimensionError, GensepError,
                     InputError, NumericalError, OracleError, UsageError)
from .separation import SeparationConfig, SeparationResult, separate
from .training import MODEL_KINDS, TrainConfig, TrainedSourceModel, train

__version__ = "0.1.0"
