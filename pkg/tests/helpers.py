import numpy as np


def rand_herm_psd(rng, n, rank=None, scale=1.0):
    rank = n if rank is None else rank
    A = rng.standard_normal((n, rank)) + 1j * rng.standard_normal((n, rank))
    return scale * (A @ A.conj().T) / rank


def rand_complex(rng, *shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
