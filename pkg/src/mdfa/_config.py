"""Numerical tolerances shared by every module."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    orthonormal: float = 1e-10
    reconstruction: float = 1e-8
    symmetry: float = 1e-10
    # eigenvalues below -psd_reject (relative to max(1, |largest|)) are an error
    psd_reject: float = 1e-6
    # relative eigenvalue cutoff for square roots and pseudoinverses
    eig_clamp: float = 1e-10
    # absolute tolerance for the score constraints
    score_check: float = 1e-8
    upper_triangle: float = 1e-10
    rank_perturbation: float = 1e-6


TOL = Tolerances()
