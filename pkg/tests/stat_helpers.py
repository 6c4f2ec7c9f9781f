"""Shared statistical thresholds for Monte Carlo assertions."""

from scipy.stats import norm

# Two-sided tail mass of a single 3-sigma check.
SINGLE_ALPHA = 2 * norm.sf(3.0)


def family_z(k: int) -> float:
    """Bonferroni threshold keeping k simultaneous checks at the 3-sigma family rate."""
    return float(norm.isf(SINGLE_ALPHA / (2 * k))) if k > 1 else 3.0
