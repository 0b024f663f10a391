"""Singular controls and control landscapes of bilinear quantum systems."""
