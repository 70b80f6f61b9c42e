"""Lattice searches for adversarial sequences and initial guesses."""
