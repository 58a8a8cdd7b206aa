from mvtrack.simulator.scene import (
    CameraPose,
    Occluder,
    OutOfFrameError,
    SceneConfig,
    SceneGenerationError,
    SceneSpec,
    annotate_scene,
    covered_fraction,
    generate_scene,
    project,
)
from mvtrack.simulator.render import export_sequence, read_pgm, render_frame, write_pgm
from mvtrack.simulator.trajectories import (
    TrajectoryDatasetConfig,
    TrajectoryPair,
    generate_trajectory_dataset,
    load_trajectory_pairs,
    make_default_trajectory_datasets,
    save_trajectory_pairs,
)

__all__ = [
    "CameraPose",
    "Occluder",
    "OutOfFrameError",
    "SceneConfig",
    "SceneGenerationError",
    "SceneSpec",
    "annotate_scene",
    "covered_fraction",
    "generate_scene",
    "project",
    "export_sequence",
    "read_pgm",
    "render_frame",
    "write_pgm",
    "TrajectoryDatasetConfig",
    "TrajectoryPair",
    "generate_trajectory_dataset",
    "load_trajectory_pairs",
    "make_default_trajectory_datasets",
    "save_trajectory_pairs",
]
