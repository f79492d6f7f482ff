"""Named random substreams derived from one master seed.

``substream(seed, name)`` seeds a PCG64 generator with ``[seed, crc32(name)]``,
so each consumer owns an independent stream and adding a new consumer
never shifts an existing one. Names in use:

- ``data``: synthetic graph generation
- ``split``: train/test and member/non-member splits
- ``init_a`` / ``init_b``: parameter initialization for each party
- ``party_a``: neighborhood sampling and perturbation noise during training
- ``party_b``: root batch selection
- ``eval``: sampling and noise at evaluation time
- ``histogram``: Laplace noise for the degree histogram
"""

import zlib

import numpy as np


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([int(seed), zlib.crc32(name.encode("utf-8"))])
