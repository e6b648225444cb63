"""Pure-numpy versions of the hot kernels.

Every function here mirrors one in ``_core.pyx`` and follows the same
operation order. Integer streams and pairwise sums agree bit-for-bit with the
compiled core; transcendental kernels agree to a few ulp (numpy and libm
use different ``log``/``cos``/``exp`` implementations).
"""

import numpy as np

GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_TWO_PI = 6.283185307179586
_INV_2_53 = 1.0 / 9007199254740992.0


def splitmix_block(key, start, n):
    """``n`` SplitMix64 outputs at counters ``start .. start+n-1``."""
    ctr = np.arange(n, dtype=np.uint64) + np.uint64(start) + np.uint64(1)
    z = np.uint64(key) + ctr * GAMMA
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def uniform_block(key, start, n):
    """Doubles in [0, 1) with 53 random bits each."""
    return (splitmix_block(key, start, n) >> np.uint64(11)).astype(np.float64) * _INV_2_53


def normal_block(key, start, n):
    """Box-Muller normals; pair ``j`` consumes counters ``start+2j`` and ``start+2j+1``."""
    pairs = (n + 1) // 2
    u = uniform_block(key, start, 2 * pairs)
    r = np.sqrt(-2.0 * np.log(1.0 - u[0::2]))
    t = _TWO_PI * u[1::2]
    out = np.empty(2 * pairs)
    out[0::2] = r * np.cos(t)
    out[1::2] = r * np.sin(t)
    return out[:n]


def pairwise_sum(values):
    """Level-wise pairwise tree: (a0+a1), (a2+a3), ...; an odd tail is carried up."""
    a = np.ascontiguousarray(values, dtype=np.float64).ravel()
    if a.size == 0:
        return 0.0
    while a.size > 1:
        if a.size % 2:
            a = np.concatenate([a[0:-1:2] + a[1::2], a[-1:]])
        else:
            a = a[0::2] + a[1::2]
    return float(a[0])


def softmax_xent(logits, labels):
    """Per-row NLL and softmax probabilities for integer labels."""
    z = np.ascontiguousarray(logits, dtype=np.float64)
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    probs = e / s
    rows = np.arange(z.shape[0])
    losses = np.log(s[:, 0]) + m[:, 0] - z[rows, labels]
    return losses, probs
