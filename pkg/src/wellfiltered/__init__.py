"""Adaptive denoising of locally well-filtered signals on regular grids."""
