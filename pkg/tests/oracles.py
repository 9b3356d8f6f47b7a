"""Independent extended-precision oracles and committed metric fixtures."""

from pathlib import Path

import mpmath
import numpy as np

FIXTURES = Path(__file__).parent / "fixtures"


def mp_fid(a, b, dps=50):
    """Extended-precision closed form: ||mu_a-mu_b||^2 + Tr(Sa + Sb - 2 sqrtm(Sa Sb))."""
    mpmath.mp.dps = dps

    def moments(x):
        n, d = x.shape
        rows = [[mpmath.mpf(float(v)) for v in r] for r in x]
        mu = [sum(r[j] for r in rows) / n for j in range(d)]
        cov = mpmath.matrix(d, d)
        for i in range(d):
            for j in range(d):
                cov[i, j] = sum((r[i] - mu[i]) * (r[j] - mu[j]) for r in rows) / (n - 1)
        return mu, cov

    mu_a, sa = moments(a)
    mu_b, sb = moments(b)
    root = mpmath.sqrtm(sa * sb)
    d = len(mu_a)
    tr = sum(sa[i, i] + sb[i, i] - 2 * root[i, i] for i in range(d))
    return float(mpmath.re(sum((x - y) ** 2 for x, y in zip(mu_a, mu_b)) + tr))


def load_fixture():
    return np.loadtxt(FIXTURES / "fid_5d_a.txt"), np.loadtxt(FIXTURES / "fid_5d_b.txt")
