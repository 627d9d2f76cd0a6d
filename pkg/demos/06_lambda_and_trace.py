"""sigma_min(Q(lambda)) as lambda grows, and the boundary trace under refinement."""
import numpy as np

from gramstab import build_coupling, build_gramian, costate_oracle, lambda_scaling_scan, parse_dipole
from gramstab.control_cost import gramian_scaling_consistency
from gramstab.feedback_loop import boundary_trace_diagnostic
from gramstab.spectral_core import interleave

mu = parse_dipole("builtin:xsq")
cpl = build_coupling(mu, 8)

scan = lambda_scaling_scan(cpl, [1, 4, 16, 64, 256])
for lam, smin, smax, ln in scan.rows():
    print(f"lambda={lam:6g}  sigma_min={smin:.3e}  sigma_max={smax:.3e}")
print(f"smallest C with ln sigma_min >= -C sqrt(lambda): {scan.c_bound:.4f}")

slope, intercept, resid, _, _ = gramian_scaling_consistency(cpl, [1, 4, 16, 64, 100])
print(f"G_(1/sqrt(lambda)) vs Q(lambda): slope {slope:.3f}, intercept {intercept:.3f}, max residual {resid:.3f}")

# third x-derivative at the walls, L2 in time, for the same profile at N=8 and N=16
k = np.arange(1, 17)
rng = np.random.default_rng(0)
c = (rng.standard_normal(16) + 1j * rng.standard_normal(16)) / k**4
c[0] = 1j * c[0].imag
for N in (8, 16):
    a = c[:N] / np.sqrt(np.sum(k[:N] ** 6 * np.abs(c[:N]) ** 2))
    cn = build_coupling(mu, N)
    traj = costate_oracle(interleave(a), build_gramian(cn, 2.0), cn, 1.0, 5e-4)
    rep = boundary_trace_diagnostic(traj)
    print(f"N={N}: trace ratios x=0 {rep.ratios[0]:.5f}, x=1 {rep.ratios[1]:.5f}")
