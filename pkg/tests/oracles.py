"""Independent reference computations shared by several test modules."""

import itertools
import math

import numpy as np
from scipy import integrate, special, stats

from .conftest import SIX_BIN_EDGES


def six_bin_cells(shift=2.0):
    """Cell probabilities and cell posterior variances for the binned scalar model.

    ``X ~ N(0, 1)``, ``Y = X + i * shift + N(0, 1)`` under hypothesis ``i``; only
    the cell of ``Y`` is observed. Moments come from direct scipy quadrature.
    """
    E = SIX_BIN_EDGES
    w = np.zeros((len(E) - 1, 2))
    c = np.zeros_like(w)
    for i in (0, 1):
        for k in range(len(E) - 1):
            a, b = E[k], E[k + 1]

            def cell(x):
                return stats.norm.cdf(b - x - shift * i) - stats.norm.cdf(a - x - shift * i)

            mom = [integrate.quad(lambda x: x ** p * stats.norm.pdf(x) * cell(x), -12, 12,
                                  limit=200, epsabs=1e-14)[0] for p in (0, 1, 2)]
            w[k, i] = mom[0]
            c[k, i] = mom[2] / mom[0] - (mom[1] / mom[0]) ** 2
    return w, c


def brute_force_P(w, c, alpha, beta):
    """Smallest worst-case conditional cost over all deterministic cell assignments."""
    best = math.inf
    for D in itertools.product((0, 1), repeat=w.shape[0]):
        D = np.array(D)
        if w[D != 0, 0].sum() > alpha + 1e-12 or w[D != 1, 1].sum() > beta + 1e-12:
            continue
        J = [(w[D == i, i] * c[D == i, i]).sum() / w[D == i, i].sum()
             for i in (0, 1) if w[D == i, i].sum() > 1e-12]
        best = min(best, max(J))
    return best


def invchisq_evidence(y, theta, zeta, phi):
    """Closed-form marginal likelihood of ``y`` with known mean and scaled inverse chi-squared variance."""
    y = np.asarray(y, float)
    n = y.size
    s = float(np.sum((y - theta) ** 2))
    return math.exp(special.gammaln((zeta + n) / 2) - special.gammaln(zeta / 2)
                    + (zeta / 2) * math.log(zeta * phi / 2) - (n / 2) * math.log(2 * math.pi)
                    - ((zeta + n) / 2) * math.log((zeta * phi + s) / 2))


def equal_mean_gaussian_chernoff(v1, v2):
    """Chernoff information between ``N(0, v1)`` and ``N(0, v2)``, maximised over a fine grid then refined."""
    def log_coeff(lam):
        # log of the integral of g^lam h^(1-lam)
        return (-lam * 0.5 * math.log(v1) - (1 - lam) * 0.5 * math.log(v2)
                - 0.5 * math.log(lam / v1 + (1 - lam) / v2))

    from scipy.optimize import minimize_scalar
    res = minimize_scalar(log_coeff, bounds=(1e-9, 1 - 1e-9), method="bounded",
                          options={"xatol": 1e-12})
    return -res.fun
