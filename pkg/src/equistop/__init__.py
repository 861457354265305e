"""Equilibrium stopping regions under non-exponential discounting."""
