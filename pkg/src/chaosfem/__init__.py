"""chaosfem: sampling-free statistical FEM with polynomial-chaos priors."""

__version__ = "0.1.0"
