"""Multi-user mmWave ISAC simulation and environment reconstruction."""

from .camera import (CameraPose, DepthMap, DEPTH_SENTINEL, corrupt_depth,
                     export_dataset, load_dataset, render_depth, rotation_matrix,
                     world_to_camera)
from .channel import (ArrayConfig, ChannelConfig, Codebook, PowerMap,
                      channel_frequency, power_map_from_paths, steering_vector,
                      subcarrier_phases, sweep_power_map)
from .geometry import SPEED_OF_LIGHT
from .localization import (PointSet, RangingConfig, build_point_set, estimate_range,
                           locate_user, merge_point_sets, reflection_point)
from .raytrace import PathParam, trace_paths
from .scene import (PlanarWall, PolynomialWall, Scene, build_scene,
                    nearest_surface_distance, sample_wall_points, save_scene)
from .selection import (ConnectedDomain, SelectionConfig, SelectionReport, binarize,
                        connected_domains, connectivity_factor, otsu_threshold,
                        power_factor, reflection_factor, select_user)
from .surface import SurfaceModel, fit_surface, kmeans, point_set_rmse

__version__ = "0.1.0"
