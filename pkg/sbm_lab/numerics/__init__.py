"""
Numerical modules: drifts, grids, the log-Laplace solver, the dual jump
process, the branching bound, the SPDE and scalar SDE schemes and the
duality harness.
"""
