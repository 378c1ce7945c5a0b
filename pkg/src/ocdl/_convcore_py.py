"""Pure-numpy direct 2D convolution kernels (fallback for the compiled core).

Accumulates one shifted slice of the larger array per kernel tap, so the
inner work stays vectorized even without the extension.
"""

import numpy as np

BACKEND = "python"


def conv_valid_direct(a, b):
    """Valid linear convolution of a with b; requires a >= b in both dims."""
    a = np.ascontiguousarray(a, dtype=np.float64)
    b = np.ascontiguousarray(b, dtype=np.float64)
    p1, p2 = b.shape
    o1 = a.shape[0] - p1 + 1
    o2 = a.shape[1] - p2 + 1
    out = np.zeros((o1, o2))
    for u in range(p1):
        row = p1 - 1 - u
        for v in range(p2):
            col = p2 - 1 - v
            out += b[u, v] * a[row : row + o1, col : col + o2]
    return out
