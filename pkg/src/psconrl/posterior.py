"""Per-row Dirichlet belief over tabular transition functions."""
from __future__ import annotations

import numpy as np


class DirichletPosterior:
    """Dirichlet(alpha[s, a, :]) for every state-action row.

    ``alpha - prior_alpha`` is exactly the transition count tensor, so the
    posterior doubles as the visit bookkeeping of the learner.
    """

    def __init__(self, alpha: np.ndarray, prior_alpha: float):
        self.alpha = np.asarray(alpha, dtype=float)
        self.prior_alpha = float(prior_alpha)

    @property
    def n_states(self) -> int:
        return self.alpha.shape[0]

    @property
    def n_actions(self) -> int:
        return self.alpha.shape[1]

    def counts(self) -> np.ndarray:
        """N(s, a, s')."""
        return np.rint(self.alpha - self.prior_alpha).astype(np.int64)

    def visit_counts(self) -> np.ndarray:
        """N(s, a)."""
        return self.counts().sum(axis=2)

    def observe(self, s: int, a: int, s_next: int) -> None:
        S, A = self.alpha.shape[:2]
        if not (0 <= s < S and 0 <= a < A and 0 <= s_next < S):
            raise IndexError(f"transition ({s}, {a}, {s_next}) out of range")
        self.alpha[s, a, s_next] += 1.0

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        # numpy's standard_gamma is Marsaglia-Tsang with the shape<1 boost
        draws = rng.standard_gamma(self.alpha)
        totals = draws.sum(axis=2, keepdims=True)
        empty = totals[..., 0] == 0.0
        if empty.any():
            # every gamma draw underflowed; fall back to the largest alpha
            idx = np.argmax(self.alpha[empty], axis=1)
            draws[empty] = 0.0
            draws[empty, idx] = 1.0
            totals = draws.sum(axis=2, keepdims=True)
        return draws / totals

    def mean(self) -> np.ndarray:
        return self.alpha / self.alpha.sum(axis=2, keepdims=True)

    def copy(self) -> "DirichletPosterior":
        return DirichletPosterior(self.alpha.copy(), self.prior_alpha)


def init_prior(n_states: int, n_actions: int, alpha0: float = 0.1) -> DirichletPosterior:
    if not alpha0 > 0:
        raise ValueError(f"prior concentration must be positive, got {alpha0}")
    return DirichletPosterior(np.full((n_states, n_actions, n_states), float(alpha0)),
                              alpha0)
