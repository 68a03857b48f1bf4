"""Spatiotemporal skip guidance for diffusion sampling, at desk scale."""
