"""Cost of steering 0 -> Phi^2_1 with the minimal-energy control as T shrinks."""
from gramstab import SteeringProblem, build_coupling, cost_scaling_experiment, min_energy_control, parse_dipole
from gramstab.control_cost import default_target

cpl = build_coupling(parse_dipole("builtin:xsq"), 8)

res = min_energy_control(SteeringProblem(1.0, 4, cpl, default_target(4)))
print(f"N=4, T=1: cost {res.cost:.6f}, L1 {res.l1_norm:.6f}, terminal error {res.terminal_error:.1e}")

grid = cost_scaling_experiment(cpl, [2, 4, 8], [0.5, 0.2, 0.1, 0.05])
print(" N     T   ln cost   cond(G_T)   terminal")
for c in grid.cells:
    print(f"{c.N:2d} {c.T:5.2f} {c.ln_cost:9.4f} {c.cond:11.3e} {c.terminal_error:10.1e}")

# the blow-up steepens with N: finite truncations only see part of e^{C/T}
for n, slope in grid.slopes.items():
    print(f"N={n}: d ln cost / d(1/T) = {slope:.3f}")
# smallest C with ln ||u||_L1 >= 1/(4T) - C ln(1/T); negative means the bound holds with room
print("lower-bound constant at N=8:", grid.lower_bound_C)
