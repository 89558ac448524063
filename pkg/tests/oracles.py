"""Brute-force path enumeration, independent of the library's array layout.

Paths are tuples of +1/-1 moves on the symmetric binary walk; a node at step
k is identified with its path prefix.
"""

import itertools
import math


def paths(n):
    return list(itertools.product((1, -1), repeat=n))


def walk(path, dt):
    return math.sqrt(dt) * sum(path)


def cond_exp(leaf_values, n, k):
    """``{prefix: E[X | prefix]}`` at step k for ``leaf_values[path]``."""
    groups = {}
    for p, v in leaf_values.items():
        groups.setdefault(p[:k], []).append(v)
    return {pre: math.fsum(vs) / len(vs) for pre, vs in groups.items()}


def entropic_at(leaf_values, n, k, delta=1.0):
    ex = {p: math.exp(delta * v) for p, v in leaf_values.items()}
    return {pre: math.log(v) / delta for pre, v in cond_exp(ex, n, k).items()}


def running_abs_max(n, dt):
    out = {}
    for p in paths(n):
        out[p] = max(abs(walk(p[:j], dt)) for j in range(n + 1))
    return out


def explicit_bsde(xi, n, T, g):
    """Explicit scheme ``Y_k = E Y_{k+1} + g(E Y_{k+1}, Z_k) dt`` by prefix recursion."""
    dt = T / n
    y = dict(xi)
    for k in range(n - 1, -1, -1):
        nxt = {}
        for pre in itertools.product((1, -1), repeat=k):
            up, dn = y[pre + (1,)], y[pre + (-1,)]
            m = 0.5 * (up + dn)
            z = (up - dn) / (2 * math.sqrt(dt))
            nxt[pre] = m + g(m, z) * dt
        y = nxt
    return y[()]


def exp_martingale_entropy(lam, n, T):
    """``E[L ln L]`` and ``E[max L]`` for the discrete exponential martingale of ``lam W``."""
    dt = T / n
    s = lam * math.sqrt(dt)
    norm = math.cosh(s)
    e_llogl = 0.0
    e_max = 0.0
    for p in paths(n):
        logs = [0.0]
        for step in p:
            logs.append(logs[-1] + s * step - math.log(norm))
        L = math.exp(logs[-1])
        e_llogl += L * logs[-1]
        e_max += max(math.exp(v) for v in logs)
    count = 2**n
    return e_llogl / count, e_max / count
