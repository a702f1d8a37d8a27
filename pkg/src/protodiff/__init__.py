"""protodiff: prototype-guided latent diffusion for histopathology patch
embeddings, with attention-MIL downstream evaluation.

The pipeline discovers per-cohort histological prototypes by k-means over
patch embeddings, trains a latent autoencoder and a noise-prediction
diffusion model, steers sampling with a noisy-latent prototype classifier,
assembles balanced synthetic/hybrid corpora, and evaluates attention-MIL
subtyping and survival models with paired statistical tests.
"""

__version__ = "0.1.0"

from .backend import backend_name

__all__ = ["backend_name", "__version__"]
