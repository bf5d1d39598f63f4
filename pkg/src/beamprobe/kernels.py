"""Hot numeric kernels, each in a numba and a pure-numpy flavour.

All indices here are 0-based.  The public names at the bottom of the module
point at the numba versions unless numba is missing or disabled through
``BEAMPROBE_DISABLE_NUMBA``; ``snr_proxy_rows`` always uses numpy.  Both flavours are kept importable
(``numpy_impl`` / ``numba_impl``) so tests and the benchmark can compare them.
"""

from types import SimpleNamespace

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

# ---------------------------------------------------------------------------
# numpy versions
# ---------------------------------------------------------------------------


def _np_percentile_sorted(xs, p):
    n = xs.shape[-1]
    pos = (n - 1) * p / 100.0
    lo = int(np.floor(pos))
    hi = min(lo + 1, n - 1)
    frac = pos - lo
    return xs[..., lo] + frac * (xs[..., hi] - xs[..., lo])


def _np_snr_proxy_rows(power, p_s, p_n, eps):
    """Percentile-ratio SNR (dB) for every row of a 2-D power array.

    Returns ``(snr_db, degenerate)`` where ``degenerate`` marks rows whose
    signal percentile is zero (reported as 0 dB).
    """
    xs = np.sort(power, axis=1)
    sig = _np_percentile_sorted(xs, p_s)
    noise = _np_percentile_sorted(xs, p_n)
    degenerate = sig <= 0.0
    safe_sig = np.where(degenerate, 1.0, sig)
    safe_den = np.where(degenerate, 1.0, noise + eps)
    out = 10.0 * np.log10(safe_sig / safe_den)
    out[degenerate] = 0.0
    return out, degenerate


def _np_zscore_rows(m, eps):
    mu = m.mean(axis=1, keepdims=True)
    sd = m.std(axis=1, keepdims=True)
    flat = sd[:, 0] < eps
    out = (m - mu) / np.where(sd < eps, 1.0, sd)
    out[flat] = 0.0
    return out


def _np_greedy_select(scores, k, d_theta):
    b = scores.shape[0]
    order = np.argsort(-scores, kind="stable")
    chosen = np.zeros(b, dtype=np.bool_)
    picked = []
    sep = d_theta
    while len(picked) < k:
        for idx in order:
            if chosen[idx]:
                continue
            if picked:
                d = np.abs(np.asarray(picked) - idx)
                d = np.minimum(d, b - d)
                if d.min() < sep:
                    continue
            chosen[idx] = True
            picked.append(int(idx))
            if len(picked) == k:
                break
        if len(picked) < k:
            sep -= 1
    return np.asarray(picked, dtype=np.int64), d_theta - sep


def _np_shield_lock(probe_idx, probe_snr, last_known, prev_lock, w, thr, keep_dominated):
    """Lock rule with margin shield; updates ``last_known`` in place.

    Returns ``(b_best, b_lock, cold_start)``.  ``prev_lock < 0`` means there is
    no previous lock.  When no neighbour qualifies the previous lock is kept,
    unless it was probed this sweep (and so measured no better than the best
    probe) and ``keep_dominated`` is false.
    """
    best = -1
    best_snr = -np.inf
    for i in range(probe_idx.shape[0]):
        bi = probe_idx[i]
        s = probe_snr[i]
        if s > best_snr or (s == best_snr and bi < best):
            best, best_snr = bi, s
    last_known[probe_idx] = probe_snr
    if best_snr >= thr:
        return best, best, False
    if prev_lock < 0:
        return best, best, True
    b = last_known.shape[0]
    cand = np.arange(b)
    d = np.abs(cand - prev_lock)
    d = np.minimum(d, b - d)
    ok = (d <= w) & ~np.isnan(last_known) & (last_known >= thr)
    if not ok.any():
        if not keep_dominated and np.any(probe_idx == prev_lock):
            return best, best, False
        return best, prev_lock, False
    vals = np.where(ok, last_known, -np.inf)
    return best, int(np.argmax(vals)), False


# ---------------------------------------------------------------------------
# numba versions
# ---------------------------------------------------------------------------


@njit
def _nb_select(a, left, right, k):
    """Reorder ``a[left:right + 1]`` in place so ``a[k]`` holds its sorted value."""
    while right > left:
        x, y, z = a[left], a[(left + right) // 2], a[right]
        pivot = max(min(x, y), min(max(x, y), z))
        i, j = left, right
        while i <= j:
            while a[i] < pivot:
                i += 1
            while a[j] > pivot:
                j -= 1
            if i <= j:
                a[i], a[j] = a[j], a[i]
                i += 1
                j -= 1
        if k <= j:
            right = j
        elif k >= i:
            left = i
        else:
            return


@njit
def _nb_snr_proxy_rows(power, p_s, p_n, eps):
    # only four order statistics are needed, so select instead of sorting;
    # p_n < p_s puts the noise ranks at or below the signal rank
    r, n = power.shape
    out = np.empty(r)
    degenerate = np.zeros(r, dtype=np.bool_)
    buf = np.empty(n)
    pos_s = (n - 1) * p_s / 100.0
    ls = int(np.floor(pos_s))
    pos_n = (n - 1) * p_n / 100.0
    ln = int(np.floor(pos_n))
    for i in range(r):
        buf[:] = power[i]
        _nb_select(buf, 0, n - 1, ls)
        s_lo = buf[ls]
        s_hi = buf[ls + 1:].min() if ls + 1 < n else s_lo
        if ln == ls:
            n_lo, n_hi = s_lo, s_hi
        else:
            _nb_select(buf, 0, ls, ln)
            n_lo = buf[ln]
            n_hi = buf[ln + 1:ls + 1].min()
        sig = s_lo + (pos_s - ls) * (s_hi - s_lo)
        noise = n_lo + (pos_n - ln) * (n_hi - n_lo)
        if sig <= 0.0:
            out[i] = 0.0
            degenerate[i] = True
        else:
            out[i] = 10.0 * np.log10(sig / (noise + eps))
    return out, degenerate


@njit
def _nb_zscore_rows(m, eps):
    r, c = m.shape
    out = np.zeros((r, c))
    for i in range(r):
        mu = 0.0
        for j in range(c):
            mu += m[i, j]
        mu /= c
        var = 0.0
        for j in range(c):
            var += (m[i, j] - mu) ** 2
        sd = np.sqrt(var / c)
        if sd < eps:
            continue
        for j in range(c):
            out[i, j] = (m[i, j] - mu) / sd
    return out


@njit
def _nb_greedy_select(scores, k, d_theta):
    b = scores.shape[0]
    order = np.argsort(-scores, kind="mergesort")
    chosen = np.zeros(b, dtype=np.bool_)
    picked = np.empty(k, dtype=np.int64)
    n = 0
    sep = d_theta
    while n < k:
        for idx in order:
            if chosen[idx]:
                continue
            ok = True
            for j in range(n):
                d = abs(picked[j] - idx)
                if b - d < d:
                    d = b - d
                if d < sep:
                    ok = False
                    break
            if not ok:
                continue
            chosen[idx] = True
            picked[n] = idx
            n += 1
            if n == k:
                break
        if n < k:
            sep -= 1
    return picked, d_theta - sep


@njit
def _nb_shield_lock(probe_idx, probe_snr, last_known, prev_lock, w, thr, keep_dominated):
    best = -1
    best_snr = -np.inf
    for i in range(probe_idx.shape[0]):
        bi = probe_idx[i]
        s = probe_snr[i]
        if s > best_snr or (s == best_snr and bi < best):
            best = bi
            best_snr = s
        last_known[bi] = s
    if best_snr >= thr:
        return best, best, False
    if prev_lock < 0:
        return best, best, True
    b = last_known.shape[0]
    pick = -1
    pick_snr = -np.inf
    for c in range(b):
        d = abs(c - prev_lock)
        if b - d < d:
            d = b - d
        if d > w:
            continue
        v = last_known[c]
        if np.isnan(v) or v < thr:
            continue
        if v > pick_snr:
            pick = c
            pick_snr = v
    if pick < 0:
        if not keep_dominated:
            for i in range(probe_idx.shape[0]):
                if probe_idx[i] == prev_lock:
                    return best, best, False
        return best, prev_lock, False
    return best, pick, False


numpy_impl = SimpleNamespace(
    snr_proxy_rows=_np_snr_proxy_rows,
    zscore_rows=_np_zscore_rows,
    greedy_select=_np_greedy_select,
    shield_lock=_np_shield_lock,
)

numba_impl = (
    SimpleNamespace(
        snr_proxy_rows=_nb_snr_proxy_rows,
        zscore_rows=_nb_zscore_rows,
        greedy_select=_nb_greedy_select,
        shield_lock=_nb_shield_lock,
    )
    if HAVE_NUMBA
    else None
)

_active = numba_impl if USE_NUMBA else numpy_impl

# numpy's vectorised sort beats a per-row compiled loop here (see benchmarks/)
snr_proxy_rows = numpy_impl.snr_proxy_rows
zscore_rows = _active.zscore_rows
greedy_select = _active.greedy_select
shield_lock = _active.shield_lock

BACKEND = "numba" if USE_NUMBA else "numpy"
