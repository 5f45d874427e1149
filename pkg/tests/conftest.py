import numpy as np
import pytest

from plqsmooth.model import StateSpaceModel


def spd_matrix(rng, d, base=0.3):
    a = rng.standard_normal((d, d)) * 0.4
    return a @ a.T + np.eye(d) * (base + rng.random())


def stable_matrix(rng, d, radius=0.8):
    q, _ = np.linalg.qr(rng.standard_normal((d, d)))
    return radius * q


def random_model(rng, N, n, m, time_varying=True):
    if time_varying:
        G = np.stack([np.eye(n)] + [stable_matrix(rng, n) for _ in range(N - 1)])
        H = np.stack([rng.standard_normal((m, n)) for _ in range(N)])
        Q = np.stack([spd_matrix(rng, n) for _ in range(N)])
        R = np.stack([spd_matrix(rng, m) for _ in range(N)])
    else:
        G = stable_matrix(rng, n)
        H = rng.standard_normal((m, n))
        Q = spd_matrix(rng, n)
        R = spd_matrix(rng, m)
    return StateSpaceModel(
        N=N, n=n, m=m, G_seq=G, H_seq=H, Q_seq=Q, R_seq=R,
        x0=rng.standard_normal(n),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
