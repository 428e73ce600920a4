"""Mean-field stochastic particle simulation with singular divergence-free
drift kernels: the random vortex method for 2D Navier-Stokes vorticity and
its McKean-Vlasov generalizations."""

__version__ = "0.1.0"
