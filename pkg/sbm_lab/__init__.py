"""
sbm-lab - A numerical laboratory for super-Brownian motion with irregular drift,
its log-Laplace equation, the signed dual jump process and the branching bound.
"""
import sys
sys.dont_write_bytecode = True

__version__ = "0.1.0"
