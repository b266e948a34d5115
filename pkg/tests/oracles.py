"""Independent numerical oracles used by the test suite.

These deliberately re-derive everything from scratch (finite differences,
series expansions) so they share no code with the library paths they check.
"""

import numpy as np


def fd_grad(f, x, h=1e-5):
    """Central-difference gradient of a scalar function of a flat vector."""
    x = np.asarray(x, dtype=float)
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2.0 * h)
    return g


def fd_laplacian(f, x, h=1e-4):
    """Sum of coordinate-wise second central differences."""
    x = np.asarray(x, dtype=float)
    f0 = f(x)
    total = 0.0
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        total += (f(x + e) - 2.0 * f0 + f(x - e)) / (h * h)
    return total


def fd_second_partial(f, x, k, l, h=1e-4):
    """Nested central difference d^2 f / dx_k dx_l."""
    x = np.asarray(x, dtype=float)
    ek = np.zeros_like(x)
    el = np.zeros_like(x)
    ek[k] = h
    el[l] = h
    return (f(x + ek + el) - f(x + ek - el) - f(x - ek + el) + f(x - ek - el)) / (4.0 * h * h)


def max_rel_err(a, b):
    """Worst per-coordinate error, relative above magnitude one, absolute below.

    |a - b| / max(1, |b|) per coordinate; reduces to plain relative error for
    O(1)-and-larger reference values and avoids division blow-ups at zeros.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.max(np.abs(a - b) / np.maximum(1.0, np.abs(b))))


def poisson_unit_square(x, y, terms=400):
    """Series solution of -laplace(u) = 1 on (0,1)^2 with zero boundary values.

    u(x, y) = sum over odd j,k of 16 / (pi^4 j k (j^2 + k^2)) sin(j pi x) sin(k pi y)
    """
    total = 0.0
    for j in range(1, terms, 2):
        sj = np.sin(j * np.pi * x)
        for k in range(1, terms, 2):
            total += 16.0 / (np.pi**4 * j * k * (j * j + k * k)) * sj * np.sin(k * np.pi * y)
    return total
