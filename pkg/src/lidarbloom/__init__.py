"""lidarbloom: physically-based ToF LiDAR point cloud synthesis.

Simulates blooming, echo pulse width and ambient noise-floor effects from
per-pixel G-buffers via a single-bounce radiometric model, with two
interchangeable engines (beam iteration and range stacking) and a built-in
analytic raycaster for desk-scale test scenes.
"""

__version__ = "0.1.0"

from .backend import BACKEND as compute_backend  # noqa: F401
from .beamkernel import (AngularGrid, SeparableKernel, combine,  # noqa: F401
                         gaussian_kernel, load_measurement,
                         load_sensitivity_slices, normalize, separate)
from .echo import (DetectionConfig, Echo, PulseShape, convolve_pulse,  # noqa: F401
                   detect_echoes, select_echo)
from .geometry import (ClipPlanes, PinholeProjection, SphericalAngle,  # noqa: F401
                       direction_to_pixel, normals_range_correction,
                       pixel_solid_angle, pixel_to_direction, zbuffer_decode,
                       zbuffer_encode)
from .pcio import (PointCloud, plot_svg, read_csv, read_gbuffer,  # noqa: F401
                   to_points, write_csv, write_gbuffer, write_ply)
from .scanpattern import Beam, ScanPattern, grid_pattern, load_pattern, \
    save_pattern  # noqa: F401
from .scene import (GBuffer, Material, Plane, Quad, RenderOptions,  # noqa: F401
                    Scene, Sphere, brdf_eval, load_scene, raycast,
                    render_gbuffer)
from .simulate import (EchoSignal, SimConfig, StackResult,  # noqa: F401
                       beam_iteration, oracle_direct, pixel_range_interval,
                       range_stacking, sample_beams)
