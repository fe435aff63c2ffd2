# Driving the adaptive loop into a blow-up and estimating the blow-up time.
#
# For the Gaussian-blob data the solution of u_t = lap(u) + u^2 ceases to
# exist in finite time.  The conditional bound certifies each slab through
# a fixed-point parameter; the first slab where that parameter stops
# existing is the stop signal.  Tightening the time tolerance pushes the
# stop closer to the blow-up time, and the final norms extrapolate it.

from semiheat import (Mesh, Tolerances, DriverOptions, builtin,
                      run_adaptive, extrapolate_blowup, fit_slope,
                      weighted_average_dofs)

prob = builtin("example1")
mesh = Mesh.uniform(prob.rect, 4)

rows = []
for j in (1, 2, 3):
    ttol = 0.25 ** j
    tol = Tolerances(stol_plus=0.01, stol_minus=0.01 / 2 ** 30,
                     ttol_plus=ttol, ttol_minus=ttol / 4096)
    res = run_adaptive(prob, tol, degree=4, initial_mesh=mesh, k1=0.07,
                       options=DriverOptions(max_steps=2000))
    rows.append(res)
    print("ttol=%-10.4g steps=%-4d stop at t=%.5f  |U|=%.2f  (%s)"
          % (ttol, res.steps, res.final_time, res.final_norm,
             res.stop_reason))

# The last two certified norms of the deepest run extrapolate the
# blow-up time (exact for a first-order pole).
L = rows[-1].ledger
tinf = extrapolate_blowup(L.t[-2], L.linf_u[-2], L.t[-1], L.linf_u[-1])
print("extrapolated blow-up time:", round(tinf, 5))

ds = [abs(tinf - r.final_time) for r in rows]
ns = [r.steps for r in rows]
print("distance to blow-up vs steps:",
      ["%.4f" % d for d in ds],
      " slope:", round(fit_slope(ns, ds), 3))
print("weighted average dofs of the deepest run:",
      round(weighted_average_dofs(rows[-1].trajectory), 1))
