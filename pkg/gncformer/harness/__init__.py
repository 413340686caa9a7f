"""Synthetic sequence tasks, optimisation, training loop, metrics and ablation drivers."""
