import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from stalegrad.core import FeasibleRegion, Schedule, SparseVector
from stalegrad.losses import LossSpec
from stalegrad.streams import SparseExample


def random_sparse_vector(rng, dim, nnz, scale=1.0):
    nnz = min(nnz, dim)
    idx = np.sort(rng.choice(dim, size=nnz, replace=False)).astype(np.int64)
    vals = rng.standard_normal(nnz) * scale
    vals[vals == 0.0] = 1.0
    return SparseVector(idx, vals)


def random_margin_stream(rng, count, dim, nnz=4, unit_norm=True):
    out = []
    for _ in range(count):
        z = random_sparse_vector(rng, dim, nnz)
        if unit_norm:
            z = SparseVector(z.indices, z.values / np.linalg.norm(z.values))
        label = 1.0 if rng.random() < 0.5 else -1.0
        out.append(SparseExample(label, z))
    return out


def random_plain_config(rng, dim):
    """Random (schedule, region, loss) for tau = 0 oracle-equivalence runs."""
    kind = rng.choice(["inv_sqrt_shifted", "inv_sqrt_plain", "inv_linear_strong"])
    sigma = float(10.0 ** rng.uniform(-1.5, 0.5))
    lam = float(10.0 ** rng.uniform(-1.0, 1.0))
    schedule = Schedule(kind=str(kind), sigma=sigma, lam=lam, tau=0)
    if rng.random() < 0.5:
        region = FeasibleRegion("l2_ball", float(10.0 ** rng.uniform(-0.5, 0.8)))
    else:
        region = FeasibleRegion("unbounded")
    loss = LossSpec(str(rng.choice(["smoothed_margin", "logistic", "squared"])), l2_reg=0.0)
    return schedule, region, loss


@pytest.fixture
def rng():
    return np.random.default_rng(0xC0FFEE)
