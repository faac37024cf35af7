"""Probable-event constrained optimization by embedding probable data points.

Typical flow: pick the probable points of a data set (:mod:`peco.data`),
work out how many of them to embed (:mod:`peco.sdds`, :mod:`peco.samplesize`),
then solve the resulting data-embedded program (:mod:`peco.dep`).
:func:`peco.pipeline.run_pipeline` chains these steps.
"""
from importlib import resources

from .data import (
    DataSet,
    ScenarioSet,
    build_d_alpha,
    empirical_probability,
    read_csv,
    rule_of_thumb_eta,
    underlying_set,
    vicinity_counts,
    write_csv,
)
from .densities import ProductDensity, alpha_from_beta, sample, standard_normal, superlevel_mass
from .dep import DepInstance, Solution, Solver, SolverConfig, build_dep, is_feasible, solve, solutions_equal
from .dsl import Expression, ProblemSpec, gradient, parse
from .pipeline import PipelineConfig, PipelineReport, predict_r_bar, run_pipeline
from .samplesize import RhoInput, draw_d_emb, min_z, monte_carlo_rho, rho, rho_exact
from .sdds import BfdsResult, SddsFamily, enumerate_sdds, find_bfds, r_bar_vector
from .store import RunRecord, store_append, store_query

__version__ = "0.1.0"


def fixture_path(name: str):
    """Path to a data file shipped with the package (e.g. ``"fig2.csv"``)."""
    return resources.files(__name__).joinpath("fixtures", name)
