"""LiDAR-inertial odometry with an iterated error-state Kalman filter on SO(3) x R^15."""
from .errors import LioError
from .feature_map import FeatureMap
from .iekf import IekfConfig, MeasurementNoise, gain_fast, gain_standard, iterated_update
from .kernels import BACKEND
from .manifold import CompoundState, boxminus, boxplus, exp_map, log_map
from .odometry import LioOdometry, RunConfig, run_odometry
from .propagation import Extrinsic, Kind, LidarPoint, backward_propagate, forward_propagate
from .state import ImuSample, NavState, ProcessNoise

__version__ = "0.1.0"
