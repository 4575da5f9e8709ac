import numpy as np

from mhdlab.initial import random_solenoidal_hat
from mhdlab.spectral import VectorField


def random_vectors(grid, seed, count=1, kmax=None):
    rng = np.random.default_rng(seed)
    arr = random_solenoidal_hat(grid, rng, kmax=kmax, count=count)
    return [VectorField(grid, spectral=a) for a in arr]
