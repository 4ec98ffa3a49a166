### Seeded, counter-based random streams (Philox).
### Every consumer asks for its own stream, keyed by (seed, stream ids...),
### so results do not depend on the order in which streams are drawn.

import numpy as np


def _seed_sequence(seed, stream):
    entropy = [int(seed)] + [int(each) for each in stream]
    if any(each < 0 for each in entropy):
        raise ValueError(f"seeds and stream ids must be non-negative, got {entropy}")
    return np.random.SeedSequence(entropy)


def generator(seed, *stream):
    return np.random.Generator(np.random.Philox(_seed_sequence(seed, stream)))


def derive_seed(seed, *stream):
    return int(_seed_sequence(seed, stream).generate_state(1, dtype=np.uint64)[0])
