"""Pure-numpy fallback for :mod:`ethrelax._kernels`.

Same signatures and results as the compiled kernels, vectorized over basis
states instead of looping.  Used when the extension is not built or when
``ETHRELAX_PURE=1`` is set.
"""
import numpy as np

# per-(dimension, mask) cache of basis states where the pair is anti-aligned
_ANTI_CACHE = {}


def _anti_states(d, mask):
    key = (d, int(mask))
    idx = _ANTI_CACHE.get(key)
    if idx is None:
        s = np.arange(d, dtype=np.int64)
        sm = s & mask
        idx = s[(sm != 0) & (sm != mask)]
        if len(_ANTI_CACHE) > 4096:
            _ANTI_CACHE.clear()
        _ANTI_CACHE[key] = idx
    return idx


def apply_xxz(diag, masks, amps, x, out, c_op=1.0, c_x=0.0, y=None, c_y=0.0):
    d = x.shape[0]
    if out.shape != x.shape:
        raise ValueError("output block has wrong shape")
    if diag.shape[0] != d:
        raise ValueError("operator dimension does not match state dimension")
    acc = (c_op * diag + c_x)[:, None] * x
    for m, a in zip(masks, amps):
        idx = _anti_states(d, m)
        acc[idx] += (c_op * a) * x[idx ^ m]
    if y is not None and c_y != 0:
        acc += c_y * y
    out[...] = acc
    return out


def diagonal_from_bonds(n_sites, zz_a, zz_b, zz_amp, fields):
    s = np.arange(1 << n_sites, dtype=np.int64)
    res = np.zeros(s.shape[0])
    for a, b, amp in zip(zz_a, zz_b, zz_amp):
        aligned = ((s >> a) ^ (s >> b)) & 1
        res += np.where(aligned == 1, -0.25, 0.25) * amp
    for i, h in enumerate(fields):
        if h != 0:
            res += np.where((s >> i) & 1, 0.5, -0.5) * h
    return res
