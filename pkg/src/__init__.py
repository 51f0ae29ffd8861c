# ETDG: ETD-RK discontinuous Galerkin stability package
__version__ = "1.0.0"
