"""Portable seeded randomness.

The only primitive drawn from the bit generator is the uniform double of
PCG64 (XSL-RR 128/64, O'Neill 2014): ``(next_uint64 >> 11) * 2**-53``,
which is what ``numpy.random.Generator.random`` returns. Everything else
is built on top of that stream with simple, reproducible algorithms:

* normals by the Marsaglia polar method, pairs consumed in order,
* permutations by a Fisher-Yates shuffle with ``j = floor(u * (i + 1))``.

Sub-seeds for independent purposes are ``seed + offset`` with the
offsets below.
"""
import numpy as np

DATA_OFFSET = 0
INIT_OFFSET = 1
SHUFFLE_OFFSET = 2
FIXTURE_OFFSET = 3


class Rng:
    def __init__(self, seed):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform(self, size=None):
        """Doubles in [0, 1)."""
        return self._gen.random(size)

    def uniform_range(self, low, high, size):
        return low + (high - low) * self.uniform(size)

    def normal(self, size):
        """Standard normals via the Marsaglia polar method.

        Candidate pairs ``(v1, v2) = 2u - 1`` are accepted when
        ``0 < s = v1^2 + v2^2 < 1``; each accepted pair yields
        ``v1 * m, v2 * m`` with ``m = sqrt(-2 ln s / s)``. Pairs are drawn in
        chunks no larger than the number still needed, so the stream is
        consumed exactly as a one-pair-at-a-time loop would.
        """
        shape = (size,) if np.isscalar(size) else tuple(size)
        n = int(np.prod(shape))
        n_pairs = (n + 1) // 2
        out = np.empty(2 * n_pairs)
        filled = 0
        while filled < n_pairs:
            need = n_pairs - filled
            u = self.uniform(2 * need).reshape(need, 2)
            v = 2.0 * u - 1.0
            s = v[:, 0] * v[:, 0] + v[:, 1] * v[:, 1]
            ok = (s > 0.0) & (s < 1.0)
            v, s = v[ok], s[ok]
            m = np.sqrt(-2.0 * np.log(s) / s)
            got = v.shape[0]
            out[2 * filled:2 * (filled + got):2] = v[:, 0] * m
            out[2 * filled + 1:2 * (filled + got):2] = v[:, 1] * m
            filled += got
        return out[:n].reshape(shape)

    def get_state(self):
        return self._gen.bit_generator.state

    def set_state(self, state):
        self._gen.bit_generator.state = state

    def permutation(self, n):
        perm = np.arange(n)
        if n < 2:
            return perm
        u = self.uniform(n - 1)
        for t, i in enumerate(range(n - 1, 0, -1)):
            j = int(u[t] * (i + 1))
            perm[i], perm[j] = perm[j], perm[i]
        return perm


def sub_rng(seed, offset):
    return Rng(int(seed) + offset)
