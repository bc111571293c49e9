import numpy as np


def derive_seed(seed, *keys) -> int:
    """Deterministic child seed: SeedSequence over ``(seed, *keys)``, folded to 63 bits."""
    state = np.random.SeedSequence([int(seed), *map(int, keys)]).generate_state(2, np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1]))
