"""Agent-based Monte Carlo simulation of lost-person movement.

Four behaviour agents walk over a raster terrain stack and a path network;
their paths are turned into found-location samples with a log-normal
mobility-time model and rasterised into a probability distribution map
(PDM). A Gaussian process up-samples sparse place-last-seen heatmaps to
seed start locations, and found-location land-cover statistics are scored
against reference data with a symmetric KL divergence.
"""

__version__ = "0.1.0"
