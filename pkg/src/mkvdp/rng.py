"""Counter-based Gaussian streams.

Each draw is a pure function of ``(seed, fine step, particle id,
replication id)`` through a Philox4x32-10 block, so increments can be
regenerated at any resolution and in any order.  Coarse increments are the
in-order sums of fine ones, which makes the fine/coarse coupling used by the
strong-error experiments exact.
"""

import numpy as np

from ._backend import kernels


def philox4x32(counter, key):
    return kernels.philox4x32(counter, key)


def standard_normals(seed, step, rep_ids, particle_ids, dim):
    """Standard normal draws of shape ``(len(rep_ids), len(particle_ids), dim)``."""
    return kernels.normals(int(seed), int(step), np.asarray(rep_ids, np.uint64),
                           np.asarray(particle_ids, np.uint64), int(dim))


def increments(seed, fine_start, ratio, h_fine, rep_ids, particle_ids, dim):
    """Brownian increment over ``ratio`` fine steps of length ``h_fine``.

    The result is ``sum_j sqrt(h_fine) * Z_j`` accumulated in step order,
    starting at fine step index ``fine_start``.
    """
    return kernels.brownian_increments(
        int(seed), int(fine_start), int(ratio), float(np.sqrt(h_fine)),
        np.asarray(rep_ids, np.uint64), np.asarray(particle_ids, np.uint64),
        int(dim))
