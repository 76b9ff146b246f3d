"""Independent reference implementations used by several test files."""

import math

ORDER = ("close", "retry", "wait")


def enumerate_tree(q, entry, d, close_px, retry_px, alpha, lam, k_max, M, guard, wait_max, k0, m0, w0=0):
    """Exhaustive decision-tree evaluation with deterministic prices.

    Every node is expanded afresh (no memo). The retry lottery is evaluated by
    listing both landing outcomes and computing mean and variance directly.
    Returns {(k, m): (action, utility)} for every node visited.
    """
    close = d * q * (entry - close_px)
    success = d * q * (entry - retry_px)
    scale = q * abs(entry)
    seen = {}

    def pick(opts):
        best = None
        for name in ORDER:
            if name in opts and (best is None or opts[name] > opts[best] + 1e-11 * scale):
                best = name
        return best

    def value(k, m, w):
        if k >= k_max:
            seen[(k, m)] = ("close", close)
            return close
        opts = {"close": close}
        if m <= M - guard:
            nxt = value(k + 1, 0, 0)
            outcomes = [(alpha, success), (1 - alpha, nxt)]
            mean = sum(p * x for p, x in outcomes)
            var = sum(p * (x - mean) ** 2 for p, x in outcomes)
            opts["retry"] = mean - lam * math.sqrt(var)
        if m < M and w < wait_max:
            opts["wait"] = value(k, m + 1, w + 1)
        a = pick(opts)
        seen[(k, m)] = (a, opts[a])
        return opts[a]

    value(k0, m0, w0)
    return seen
