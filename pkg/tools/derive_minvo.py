"""Numerically derive the MINVO basis matrices on u in [0, 1].

Degree 2: every basis polynomial is written in Lukacs form (nonnegative on
[0, 1]).  Degree 3 uses the endpoint-root / double-interior-root structure
of the optimum together with the u -> 1-u symmetry.  The basis must sum to
one and |det| of the coefficient matrix is maximized.  Rows are printed in
descending-power order.
"""
import numpy as np
from scipy.optimize import minimize


def quad_basis(x):
    rows = []
    for i in range(3):
        a0, a1, b = x[3 * i:3 * i + 3]
        # (a0 + a1 u)^2 + b^2 u (1 - u)
        rows.append([a1 * a1 - b * b, 2 * a0 * a1 + b * b, a0 * a0])
    return np.array(rows)


def _flip(p):
    # coefficients of p(1 - u), descending powers
    c = np.polyval(np.poly1d(p), np.poly1d([-1.0, 1.0])).coeffs
    return np.pad(c, (len(p) - len(c), 0))


def cubic_basis(x):
    c0, a0, c1, a1 = x
    l0 = c0 * np.polymul([-1.0, 1.0], np.polymul([1.0, -a0], [1.0, -a0]))
    l1 = c1 * np.polymul([1.0, 0.0], np.polymul([1.0, -a1], [1.0, -a1]))
    return np.array([l0, l1, _flip(l1), _flip(l0)])


def cubic_basis_reduced(a):
    """Cubic basis with the interior roots free; scales fixed by partition of unity."""
    a0, a1 = a
    s0 = cubic_basis([1.0, a0, 0.0, a1]).sum(axis=0)
    s1 = cubic_basis([0.0, a0, 1.0, a1]).sum(axis=0)
    # the sum is symmetric about u = 1/2, so matching it at u = 0 and u = 1/2 suffices
    M = np.array([[np.polyval(s0, 0.0), np.polyval(s1, 0.0)],
                  [np.polyval(s0, 0.5), np.polyval(s1, 0.5)]])
    c0, c1 = np.linalg.solve(M, [1.0, 1.0])
    return cubic_basis([c0, a0, c1, a1])


def solve(builder, n, x0s):
    target = np.zeros(n + 1)
    target[-1] = 1.0
    best = None
    for x0 in x0s:
        r = minimize(lambda x: -abs(np.linalg.det(builder(x))), x0,
                     constraints=[{"type": "eq", "fun": lambda x: builder(x).sum(axis=0) - target}],
                     method="SLSQP", options={"maxiter": 500, "ftol": 1e-16})
        if r.success and (best is None or r.fun < best.fun):
            best = r
    return builder(best.x), -best.fun


if __name__ == "__main__":
    np.set_printoptions(precision=17, linewidth=200)
    rng = np.random.default_rng(1)
    A2, d2 = solve(quad_basis, 2, [rng.normal(size=9) for _ in range(40)])
    r = min((minimize(lambda a: -abs(np.linalg.det(cubic_basis_reduced(a))), x0,
                      method="Nelder-Mead",
                      options={"xatol": 1e-15, "fatol": 1e-18, "maxiter": 20000})
             for x0 in [(0.52, 0.89), (0.4, 0.8), (0.6, 0.95)]),
            key=lambda r: r.fun)
    A3, d3 = cubic_basis_reduced(r.x), -r.fun
    for A, d in ((A2, d2), (A3, d3)):
        print("det", d)
        print(repr(A))
