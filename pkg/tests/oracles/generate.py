"""Regenerate the frozen oracle values in ``values.json``.

Everything here is computed with mpmath at 30 significant digits or from closed
forms; nothing imports the package under test. Run from the repository root:

    python tests/oracles/generate.py
"""

import itertools
import json
from pathlib import Path

import mpmath as mp

mp.mp.dps = 30
OUT = Path(__file__).with_name("values.json")


def phi(x):
    return mp.npdf(x)


def Phi(x):
    return mp.ncdf(x)


def bvn(x, y, r):
    """P(X <= x, Y <= y) by the conditional single integral."""
    x, y, r = mp.mpf(x), mp.mpf(y), mp.mpf(r)
    if r == 0:
        return Phi(x) * Phi(y)
    s = mp.sqrt(1 - r * r)
    f = lambda t: phi(t) * Phi((y - r * t) / s)
    # split where the inner CDF switches from 0 to 1 so the integrator sees it
    centre = y / r
    cuts = [t for t in (centre - 10 * s, centre - s, centre, centre + s, centre + 10 * s, 0) if t < x]
    return mp.quad(f, [-mp.inf] + sorted(set(cuts)) + [x])


def second_place(V, chosen, k):
    """P(y_k is second | y_chosen is first) for independent N(V_j, 1) utilities."""
    others = [j for j in range(len(V)) if j not in (chosen, k)]

    def joint(t):  # y_k = t is second: chosen above t, the rest below t
        p = phi(t - V[k]) * (1 - Phi(t - V[chosen]))
        for j in others:
            p *= Phi(t - V[j])
        return p

    def first(t):
        p = phi(t - V[chosen])
        for j in range(len(V)):
            if j != chosen:
                p *= Phi(t - V[j])
        return p

    return mp.quad(joint, [-mp.inf, 0, mp.inf]) / mp.quad(first, [-mp.inf, 0, mp.inf])


def main():
    out = {}
    out["cdf"] = {repr(x): float(Phi(x)) for x in
                  [-37.0, -20.0, -8.0, -5.5, -3.0, -1.959964, -0.3, 0.0, 0.7, 1.959964, 4.0, 8.0]}
    out["quantile_0975"] = float(mp.sqrt(2) * mp.erfinv(2 * mp.mpf("0.975") - 1))
    out["quantile_075"] = float(mp.sqrt(2) * mp.erfinv(2 * mp.mpf("0.75") - 1))
    grid = []
    for x, y, r in itertools.product([-3.0, -0.7, 0.0, 1.2, 4.0], [-2.5, 0.3, 2.0],
                                     [-0.95, -0.5, 0.0, 0.3, 0.9, 0.999]):
        grid.append([x, y, r, float(bvn(x, y, r))])
    out["bvn_grid"] = grid
    # closed-form orthant probabilities
    out["bvn_orthant_05"] = float(mp.mpf(1) / 4 + mp.asin(mp.mpf("0.5")) / (2 * mp.pi))
    out["bvn_orthant_08"] = float(mp.mpf(1) / 4 + mp.asin(mp.mpf("0.8")) / (2 * mp.pi))
    out["trivariate_orthant_05"] = float(mp.mpf(1) / 8 + 3 * mp.asin(mp.mpf("0.5")) / (4 * mp.pi))
    # J=3 differenced rectangles: (u_k - u_c) <= b_k, exchangeable correlation a
    rect = []
    levels = [-1.5, -0.5, 0.0, 0.7, 1.8]
    for a in (0.0, 0.3, 0.5):
        sd = mp.sqrt(2 - 2 * mp.mpf(a))
        for b1, b2 in itertools.product(levels, levels):
            rect.append([a, b1, b2, float(bvn(b1 / sd, b2 / sd, mp.mpf("0.5")))])
    out["ghk_rectangles"] = rect
    V = [0.0, 1.0, -1.0]
    out["second_place_V"] = V
    out["second_place_chosen"] = 1
    out["second_place"] = [0.0 if k == 1 else float(second_place(V, 1, k)) for k in range(3)]
    out["chi2_1_at_3.8416"] = float(mp.erfc(mp.sqrt(mp.mpf("3.8416") / 2)))
    # chi-square 5 dof survival: Q(5/2, x/2)
    out["chi2_5_at_11.0705"] = float(mp.gammainc(mp.mpf(5) / 2, mp.mpf("11.0705") / 2, mp.inf,
                                                 regularized=True))
    OUT.write_text(json.dumps(out, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
