"""Independent checks for constants pinned in the Rust tests.

Run with `python3 crates/core/tests/oracles/constants.py`.
"""
import math

from scipy.stats import norm

ALPHA, BETA, GAMMA, E0 = 0.025, 0.0002, 1.0, 100.0


def doom_bound():
    # 3x3 disk, 4 temporal channels at intensity 1: V = 36, C = 4/4 * exp(0).
    # Two steps over 8 edges: K = 16.
    net = BETA * 16 + GAMMA - ALPHA * 36
    closed = math.ceil(E0 / net)
    e, t = E0, 0
    while e > 0:
        gain = ALPHA * 1.0 * 36
        e = e + ((gain - BETA * 16) - GAMMA)
        t += 1
    return closed, t


def mann_kendall_increasing(n):
    s = n * (n - 1) // 2
    var = n * (n - 1) * (2 * n + 5) / 18
    z = (s - 1) / math.sqrt(var)
    return z, 2 * (1 - norm.cdf(abs(z)))


if __name__ == "__main__":
    print("doom bound (closed form, float walk):", doom_bound())
    print("guard trivial gains:", 32 * math.exp(-4.0), 32 * math.exp(-0.5))
    print("mse (0.8 - 0.5)^2:", repr((0.8 - 0.5) ** 2))
    print("attenuate 0.9 at d=3:", repr(0.9 / 9))
    print("mann-kendall n=5:", mann_kendall_increasing(5))
