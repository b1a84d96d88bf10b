"""Independent reference values frozen into the tests.

Run ``python3 tests/oracles.py`` to regenerate. Nothing here imports the
package: every number comes from mpmath closed forms or brute-force
loops written separately from the library code.
"""

import math

import mpmath as mp

mp.mp.dps = 30


def weibull2_pi():
    f = lambda x: 2 * x * mp.e ** (-x * x)
    return f(mp.mpf("0.25")) ** 2 / f(mp.mpf("0.5"))


def erlang_hawkes_pi(points, t, n=100_000, alpha=1.0, K=2.0, z=0.1, T=1.0):
    """pi_t for the clamp link and kernel 1_[0,z], by a midpoint sum with n cells."""
    phi = lambda u: alpha * min(max(K - u, 0.0), 1.0)
    h = lambda s: 1.0 if 0 <= s <= z else 0.0

    def lam(s, pts):
        return phi(sum(h(s - p) for p in pts if p < s))

    plus = sorted(points + [t])
    lam_t = lam(t, points)
    ds = (T - t) / n
    acc = 0.0
    for k in range(n):
        s = t + (k + 0.5) * ds
        acc += (lam(s, points) - lam(s, plus)) * ds
    log_ratio = 0.0
    for p in points:
        if p > t:
            log_ratio += math.log(lam(p, plus) / lam(p, points))
    return lam_t * math.exp(acc + log_ratio)


def cox_two_component():
    e = mp.e
    return (e**-1 + 2 * e**-2) / (e**-1 + e**-2)


def gamma_erlang(a=1.0, z=0.1, T=1.0):
    a, z, T = mp.mpf(a), mp.mpf(z), mp.mpf(T)
    mz = min(z, T)
    return a * (mp.e ** (2 * a * mz) / (2 * a) - 1 / (2 * a) - mz + (mp.e ** (2 * a * z) - 1) * max(T - z, 0))


def gamma_hawkes_quad(a=1.0, z=0.1, T=1.0):
    prim = lambda tau: min(tau, z)
    return a * mp.quad(lambda tau: mp.e ** (2 * a * prim(tau)) - 1, [0, z, T])


def weibull_gamma_star(b=1.1, T=1.0):
    Tb = mp.mpf(T) ** b
    return Tb * (mp.e ** (2 * (b - 1) * Tb) - 1)


def pareto_gamma_star(lam=1.0, xi=0.1, T=1.0):
    return xi * lam**2 * T**2 * (1 + xi * lam * T / 3)


def c_constant(x, M=1.0, B=1.0):
    x, M, B = mp.mpf(x), mp.mpf(M), mp.mpf(B)
    return (x / M + B) * mp.log(1 + x / (M * B)) - x / M


def c_bruteforce(x, M=1.0, B=1.0, n=200_001, top=5.0):
    """max over a theta lattice of theta x - B (e^(theta M) - theta M - 1)."""
    best = 0.0
    for k in range(n):
        th = top * k / (n - 1)
        best = max(best, th * x - B * (math.exp(th * M) - th * M - 1))
    return best


def renewal_exp_g2_at_zero():
    e = mp.e
    hbar, beta = e, 1 + e
    tail_T = e**-1
    return mp.sqrt(2 * (hbar**2 + tail_T**-2 - 1)) * mp.sqrt(beta * 1 + beta**2 * 1)


def hawkes_erlang_g2_at_zero(a=1.0, z=0.1, T=1.0, n=200_000):
    """Midpoint sums for the Hawkes g2 with g = 1 at t = 0."""
    K = lambda u: min(max(u, 0.0), z)  # int_0^u 1_[0,z]
    ds = T / n
    i2 = i1 = 0.0
    for k in range(n):
        s = (k + 0.5) * ds
        E = math.exp(a * K(T - s))
        i2 += E * ds
        i1 += E * ds
    phi0 = a
    return math.sqrt(2) * math.sqrt(phi0 * i2 + (phi0 * i1) ** 2) * math.sqrt(math.expm1(2 * a * K(T)))


def hawkes_erlang_g2_closed(a=1.0, z=0.1, T=1.0):
    """Same quantity in closed form: int_0^T exp(a min(T - s, z)) ds = (T - z) e^(az) + (e^(az) - 1) / a."""
    a, z, T = mp.mpf(a), mp.mpf(z), mp.mpf(T)
    i = (T - z) * mp.e ** (a * z) + (mp.e ** (a * z) - 1) / a
    return mp.sqrt(2) * mp.sqrt(a * i + (a * i) ** 2) * mp.sqrt(mp.e ** (2 * a * z) - 1)


def cox_desk_g2_at_zero(alpha=1.0, beta=2.0, T=1.0):
    return math.sqrt(2) * math.sqrt(beta * T + (beta * T) ** 2) * math.sqrt(beta**2 / alpha**2 - 1)


def entropy_tilt(c=1.0, lam_T=1.0):
    u = mp.e ** -c - 1
    return ((1 + u) * mp.log(1 + u) - u) * lam_T


def gap_scalar_oracle(c=1.0, lam_T=1.0):
    """(lhs, rhs at u = e^-c - 1, rhs at u = 0.5) for G = cN under Poisson."""
    lhs = lam_T * (1 - mp.e**-c)
    u = mp.e**-c - 1
    rhs_opt = c * lam_T * (1 + u) + ((1 + u) * mp.log(1 + u) - u) * lam_T
    v = mp.mpf("0.5")
    rhs_half = c * lam_T * (1 + v) + ((1 + v) * mp.log(1 + v) - v) * lam_T
    return lhs, rhs_opt, rhs_half


if __name__ == "__main__":
    print("weibull2_pi", mp.nstr(weibull2_pi(), 17))
    print("erlang_pi_spec", erlang_hawkes_pi([0.5], 0.2))
    print("erlang_pi_dense", erlang_hawkes_pi([0.15, 0.28, 0.5], 0.2))
    print("cox_two_component", mp.nstr(cox_two_component(), 17))
    print("gamma_erlang", mp.nstr(gamma_erlang(), 17), mp.nstr(gamma_hawkes_quad(), 17))
    print("weibull_gamma_star", mp.nstr(weibull_gamma_star(), 17))
    print("pareto_gamma_star", pareto_gamma_star())
    print("c1", mp.nstr(c_constant(1), 17), c_bruteforce(1.0))
    print("c05", mp.nstr(c_constant(0.5), 17), c_bruteforce(0.5))
    print("dev_bound_n10_r1", mp.nstr(mp.e ** (-10 * c_constant(1)), 17))
    print("dev_bound_n20_r05", mp.nstr(mp.e ** (-20 * c_constant(0.5)), 17))
    print("renewal_exp_g2", mp.nstr(renewal_exp_g2_at_zero(), 17))
    print("hawkes_g2", hawkes_erlang_g2_at_zero(), mp.nstr(hawkes_erlang_g2_closed(), 17))
    print("cox_desk_g2", cox_desk_g2_at_zero())
    print("entropy_tilt", mp.nstr(entropy_tilt(), 17))
    print("gap", [mp.nstr(v, 17) for v in gap_scalar_oracle()])
