"""Numerics port definition (DTO)."""

from dataclasses import dataclass

__all__ = ["NumericsPort", "DEFAULT_NUMERICS"]


@dataclass(slots=True, frozen=True)
class NumericsPort:
    """Tolerances and limits consumed by the numerical core.

    Decouples core from the concrete configuration source (environment,
    .env file, CLI flags), so tests can build one directly.

    Attributes:
        kkt_tol: Absolute KKT residual accepted from the group Lasso solvers.
        max_sweeps: Block coordinate descent sweep cap.
        pattern_rel_tol: Group activity threshold, relative to the loading norm.
        boundary_tol: Distance to 1 under which a condition value counts as boundary.
        loading_free_restarts: Random restarts of the loading-free maximization.
        sdp_gap_tol: Primal-dual gap at which the cutting-plane SDP stops.
        sdp_max_iter: Cutting-plane iteration cap.
        mc_draws: Default Monte-Carlo draw count for pattern probabilities.
        mkl_gap_tol: Relative duality gap accepted from the MKL solver.
        mkl_max_iter: Alternating MKL iteration cap.
        mkl_max_n: Largest sample count accepted by the kernel solvers.
        kappa0: Constant of the kappa_n = kappa0 * n^(-1/3) schedule.
        truncation: Default eigenbasis truncation of the Gaussian-analytic module.
        quadrature_margin: Extra Gauss-Hermite nodes per axis beyond 2*max(k, l).
        max_attempts: Rejection-sampling cap for conditioned model generation.
    """

    kkt_tol: float = 1e-7
    max_sweeps: int = 100_000
    pattern_rel_tol: float = 1e-8
    boundary_tol: float = 1e-6
    loading_free_restarts: int = 50
    sdp_gap_tol: float = 1e-7
    sdp_max_iter: int = 2_000
    mc_draws: int = 100_000
    mkl_gap_tol: float = 1e-8
    mkl_max_iter: int = 10_000
    mkl_max_n: int = 5_000
    kappa0: float = 1.0
    truncation: int = 30
    quadrature_margin: int = 40
    max_attempts: int = 100_000


DEFAULT_NUMERICS = NumericsPort()
