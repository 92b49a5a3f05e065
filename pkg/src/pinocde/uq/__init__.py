"""Uncertainty propagation through the oracle or a trained surrogate."""
from .mc import (DamageField, Ensemble, compare_pdf, damage_probability, mc_propagate,
                 pdf_estimate)
from .pdem import (PDFGrid, evolve_pdf, hat_density, load_pdf_grid, run_pdem, save_pdf_grid,
                   uniform_grid)
from .points import RepresentativePointSet, korobov_lattice, select_representative_points
from .quantity import Quantity, oracle_provider, parse_quantity, surrogate_provider

__all__ = ["DamageField", "Ensemble", "compare_pdf", "damage_probability", "mc_propagate",
           "pdf_estimate", "PDFGrid", "evolve_pdf", "hat_density", "load_pdf_grid", "run_pdem",
           "save_pdf_grid", "uniform_grid", "RepresentativePointSet", "korobov_lattice",
           "select_representative_points", "Quantity", "oracle_provider", "parse_quantity",
           "surrogate_provider"]
