"""Dipole couplings in the sine basis and the k^3 |b_k| lower bound."""
import math

import numpy as np

from gramstab import build_coupling, mu_condition_check, parse_dipole

mu = parse_dipole("builtin:xsq")  # mu(x) = x^2
cpl = build_coupling(mu, 12)

# b_k = <mu phi_1, phi_k>; for x^2 there is a closed form once k >= 2
k = np.arange(2, 13)
closed = 8 * k * (-1.0) ** (k - 1) / ((k**2 - 1) ** 2 * math.pi**2)
print("b_1 =", cpl.b[0], " expected", 1 / 3 - 1 / (2 * math.pi**2))
print("max |b_k - closed form| for k >= 2:", np.max(np.abs(cpl.b[1:] - closed)))

# the sign alternates and k^3 b_k settles towards 8/pi^2
for N in (8, 16, 64):
    rep = mu_condition_check(build_coupling(mu, N))
    print(f"N={N:3d}  min k^3|b_k| = {rep.min_value:.6f} (k={rep.argmin})")
print("8/pi^2 =", 8 / math.pi**2)

# a constant dipole only couples mode 1 to itself, so the check fails
flat = mu_condition_check(build_coupling(parse_dipole("poly:[1]"), 8))
print("mu = 1:", flat.min_value)
