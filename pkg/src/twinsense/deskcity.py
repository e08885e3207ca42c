"""The fixed "deskcity" benchmark scene.

A small urban block: 8 rectangular buildings arranged in street rows, two
foliage strips, one elevated BS looking down the grid, and roughly 2,000
grid users. All experiment seeds and dimensions are pinned here so results
are reproducible bit-for-bit.
"""

from __future__ import annotations

import numpy as np

from .harness import ExperimentConfig, PerturbationLabel
from .learn import TrainConfig
from .raytrace import RayConfig
from .scene import BaseStation, FoliageRegion, Scene, UserGrid

DESKCITY_SEED = 2024


_SCALE = 3.0  # block size in meters per unit of the layout sketch below


def _rect(x0, y0, x1, y1) -> np.ndarray:
    return _SCALE * np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]],
                             dtype=float)


def deskcity_scene() -> Scene:
    buildings = [
        _rect(4, 28, 12, 36),
        _rect(18, 28, 26, 36),
        _rect(32, 28, 40, 36),
        _rect(8, 12, 16, 20),
        _rect(22, 12, 30, 20),
        _rect(34, 12, 42, 20),
        _rect(2, 2, 10, 8),
        _rect(30, 2, 38, 8),
    ]
    foliage = [
        FoliageRegion(_rect(0, 23, 44, 26), atten_db_per_m=1.0),
        FoliageRegion(_rect(10, 44.5, 34, 46.5), atten_db_per_m=1.5),
    ]
    return Scene(
        name="deskcity",
        bs=BaseStation(pos=(22.0 * _SCALE, 50.0 * _SCALE, 15.0),
                       boresight_rad=-np.pi / 2),
        grid=UserGrid(origin=(0.0, 0.0), width=44.0 * _SCALE,
                      height=44.0 * _SCALE, spacing=2.75, user_height=2.0),
        buildings=buildings,
        foliage=foliage,
    )


def deskcity_ray_config() -> RayConfig:
    # order 3 gives rich multipath while keeping full-grid tracing under a
    # minute at desk scale
    return RayConfig(carrier_hz=3.5e9, max_order=3,
                     reflection_coeff=-0.6 + 0.0j, max_paths=25)


def deskcity_config(scene_path: str, output_dir: str) -> ExperimentConfig:
    return ExperimentConfig(
        scene_path=scene_path,
        output_dir=output_dir,
        seed=DESKCITY_SEED,
        n_t=32,
        codebook_size=32,
        h1=256,
        h2=256,
        m_t_default=8,
        sweep=[1, 2, 4, 8, 16],
        refine_fractions=[0.0, 0.25, 1.0],
        refine_source="twin-1m",
        perturbations=[
            PerturbationLabel(label="twin-0m", building_error_m=0.0,
                              drop_foliage=False),
            PerturbationLabel(label="twin-1m", building_error_m=1.0,
                              drop_foliage=False),
            PerturbationLabel(label="twin-5m", building_error_m=5.0,
                              drop_foliage=True),
        ],
        ray=deskcity_ray_config(),
        train=TrainConfig(lr=3e-3, batch_size=128, epochs=300,
                          seed=DESKCITY_SEED, rehearsal_mix=0.2),
    )
