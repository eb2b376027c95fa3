"""Two-sample statistics for judging generated samples."""

import numpy as np
from scipy.spatial.distance import cdist

from hifql.errors import ContractViolation


def energy_distance(x, y):
    """2 E||X - Y|| - E||X - X'|| - E||Y - Y'|| (V-statistic); 0 iff the samples coincide."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    if x.shape[1] != y.shape[1]:
        raise ContractViolation(f"sample dims differ: {x.shape[1]} vs {y.shape[1]}")
    if len(x) == 0 or len(y) == 0:
        raise ContractViolation("energy distance needs two nonempty samples")
    xy = cdist(x, y).mean()
    xx = cdist(x, x).mean()
    yy = cdist(y, y).mean()
    return float(2.0 * xy - xx - yy)
