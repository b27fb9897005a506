"""Scikit-learn style front door for the whole pipeline.

`GaussianFieldInitializer` exposes every run knob through `get_params` /
`set_params`, fits on a text prompt, and hands back the initialization point
cloud, so it composes with sklearn tooling (cloning, grid search over e.g.
tau or learning rate, pipelines that consume the cloud).
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .camera import orbit_pose
from .config import TrainConfig
from .field import InitPointCloud, filter_occupied
from .guidance import TargetSet
from .renderer import RenderedImage, splat_render
from .training import train_init


class GaussianFieldInitializer(BaseEstimator):
    """Optimize a voxel-Gaussian field for a prompt and extract a point cloud.

    Parameters mirror TrainConfig; see that class for semantics and defaults.
    """

    def __init__(
        self,
        resolution: int = 32,
        grids: int = 16,
        feature_dim: int = 64,
        text_dim: int = 64,
        hidden_dim: int = 64,
        freq_bands: int = 6,
        iterations: int = 1000,
        learning_rate: float = 1e-3,
        tau: float = 0.1,
        seed: int = 0,
        dtype: str = "float64",
        provider: str = "synthetic",
        bridge_url: str | None = None,
        guidance_scale: float = 20.0,
        render_size: int = 64,
        orbit_radius: float = 2.2,
        elevation_min: float = -10.0,
        elevation_max: float = 45.0,
        fov_deg: float = 49.1,
        views_per_step: int = 1,
    ) -> None:
        self.resolution = resolution
        self.grids = grids
        self.feature_dim = feature_dim
        self.text_dim = text_dim
        self.hidden_dim = hidden_dim
        self.freq_bands = freq_bands
        self.iterations = iterations
        self.learning_rate = learning_rate
        self.tau = tau
        self.seed = seed
        self.dtype = dtype
        self.provider = provider
        self.bridge_url = bridge_url
        self.guidance_scale = guidance_scale
        self.render_size = render_size
        self.orbit_radius = orbit_radius
        self.elevation_min = elevation_min
        self.elevation_max = elevation_max
        self.fov_deg = fov_deg
        self.views_per_step = views_per_step

    def build_config(self) -> TrainConfig:
        return TrainConfig(
            resolution=self.resolution,
            grids=self.grids,
            feature_dim=self.feature_dim,
            text_dim=self.text_dim,
            hidden_dim=self.hidden_dim,
            freq_bands=self.freq_bands,
            iterations=self.iterations,
            learning_rate=self.learning_rate,
            tau=self.tau,
            seed=self.seed,
            dtype=self.dtype,
            provider=self.provider,
            bridge_url=self.bridge_url,
            guidance_scale=self.guidance_scale,
            render_size=self.render_size,
            orbit_radius=self.orbit_radius,
            elevation_min=self.elevation_min,
            elevation_max=self.elevation_max,
            fov_deg=self.fov_deg,
            views_per_step=self.views_per_step,
        ).validate()

    def fit(self, prompt: str, targets: TargetSet | None = None, out_dir=None, verbose: bool = False):
        """Run the optimization; `targets` is required in synthetic mode."""
        result = train_init(prompt, self.build_config(), targets=targets, out_dir=out_dir, verbose=verbose)
        self.field_ = result.field
        self.params_ = result.params
        self.metrics_ = result.metrics
        self.cloud_ = result.cloud
        self.prompt_ = prompt
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "field_"):
            raise NotFittedError("this GaussianFieldInitializer has not been fitted; call fit(prompt) first")

    def extract(self, tau: float | None = None) -> InitPointCloud:
        """Point cloud at the fitted (or an alternative) opacity threshold."""
        self._check_fitted()
        if tau is None:
            return self.cloud_
        return filter_occupied(self.field_, tau)

    def render(self, azimuth_deg: float = 30.0, elevation_deg: float = 20.0) -> RenderedImage:
        """Render the fitted field from an orbit pose."""
        self._check_fitted()
        cam = orbit_pose(azimuth_deg, elevation_deg, self.build_config().orbit())
        return splat_render(self.field_, cam)

    def occupancy(self) -> np.ndarray:
        """Boolean occupancy of the fitted field at the configured tau."""
        self._check_fitted()
        return self.field_.opacity >= self.tau
