"""Camera geometry, depth-discretized lifting and pillar pooling.

Frames: the ego frame has x forward, y left, z up.  Camera frames use the
pinhole convention (x right, y down, z along the optical axis); a camera's
``extrinsics`` maps camera coordinates into the ego frame.
"""

import configparser
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigurationError, DomainError, FormatError
from .validation import as_float_array, check_distribution

N_PAST_FRAMES = 5
N_CAMERAS = 6


@dataclass(frozen=True)
class GridSpec:
    """Regular BEV lattice; cell ``(i, j)`` spans ``[x_min + i*c, x_min + (i+1)*c)``."""

    x_min: float = -50.0
    y_min: float = -50.0
    cell_size: float = 0.5
    nx: int = 200
    ny: int = 200

    def __post_init__(self):
        if not self.cell_size > 0 or self.nx <= 0 or self.ny <= 0:
            raise ConfigurationError("grid needs a positive cell size and dims")

    @classmethod
    def centered(cls, half_extent=50.0, cell_size=0.5):
        n = int(round(2 * half_extent / cell_size))
        return cls(-half_extent, -half_extent, cell_size, n, n)

    @property
    def shape(self):
        return (self.nx, self.ny)

    def cell_index(self, x, y):
        """Integer lattice indices of the cells containing ``(x, y)`` (may be out of range)."""
        i = np.floor((np.asarray(x) - self.x_min) / self.cell_size).astype(np.int64)
        j = np.floor((np.asarray(y) - self.y_min) / self.cell_size).astype(np.int64)
        return i, j

    def in_range(self, i, j):
        return (i >= 0) & (i < self.nx) & (j >= 0) & (j < self.ny)

    def centers(self):
        """Cell-center coordinates, each of shape ``(nx, ny)``."""
        xs = self.x_min + (np.arange(self.nx) + 0.5) * self.cell_size
        ys = self.y_min + (np.arange(self.ny) + 0.5) * self.cell_size
        return np.meshgrid(xs, ys, indexing="ij")


@dataclass(frozen=True, eq=False)
class CameraModel:
    intrinsics: np.ndarray
    extrinsics: np.ndarray
    height: int
    width: int

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=np.float64)
        E = np.asarray(self.extrinsics, dtype=np.float64)
        if K.shape != (3, 3) or E.shape != (4, 4):
            raise ConfigurationError("intrinsics must be 3x3 and extrinsics 4x4")
        if not (K[0, 0] > 0 and K[1, 1] > 0):
            raise ConfigurationError("focal lengths must be positive")
        if abs(np.linalg.det(K)) < 1e-12:
            raise ConfigurationError("intrinsics are not invertible")
        R = E[:3, :3]
        if not np.allclose(R @ R.T, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ConfigurationError("extrinsic rotation must be orthonormal with det +1")
        if self.height <= 0 or self.width <= 0:
            raise ConfigurationError("image dims must be positive")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "extrinsics", E)

    @property
    def rotation(self):
        return self.extrinsics[:3, :3]

    @property
    def translation(self):
        return self.extrinsics[:3, 3]


@dataclass(frozen=True)
class DepthSet:
    """Depths ``d0 + i*delta_d`` for ``i = 1..count``."""

    d0: float = 3.0
    delta_d: float = 1.0
    count: int = 41

    def __post_init__(self):
        if self.count <= 0:
            raise ConfigurationError("depth count must be positive")
        if not self.delta_d > 0:
            raise ConfigurationError("depths must be strictly increasing")
        if not self.d0 + self.delta_d > 0:
            raise ConfigurationError("first depth must be positive")

    @property
    def values(self):
        return self.d0 + self.delta_d * np.arange(1, self.count + 1)


@dataclass(frozen=True, eq=False)
class FeatureImage:
    features: np.ndarray
    depth_dist: np.ndarray

    def __post_init__(self):
        f = as_float_array(self.features, ndim=3, name="features")
        pi = as_float_array(self.depth_dist, ndim=3, name="depth_dist")
        if f.shape[:2] != pi.shape[:2]:
            raise DomainError("features and depth distribution differ in H x W")
        check_distribution(pi, axis=-1, name="depth distribution")
        object.__setattr__(self, "features", f)
        object.__setattr__(self, "depth_dist", pi)

    @property
    def dims(self):
        return self.features.shape[:2]

    @classmethod
    def from_array(cls, arr, n_depths):
        """Split a ``(H, W, C + |D|)`` dump into features and depth distribution."""
        arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] <= n_depths:
            raise FormatError(f"feature dump of shape {arr.shape} cannot hold {n_depths} depths")
        pi = arr[:, :, -n_depths:]
        # float32 storage; renormalize the rounding away
        pi = pi / pi.sum(axis=-1, keepdims=True)
        return cls(arr[:, :, :-n_depths], pi)

    def to_array(self):
        return np.concatenate([self.features, self.depth_dist], axis=-1)


@dataclass(frozen=True, eq=False)
class FrustumPoints:
    positions: np.ndarray   # (N, 3) ego frame, meters
    features: np.ndarray    # (N, C)
    camera: np.ndarray      # (N,) camera index
    timestamp: np.ndarray   # (N,)

    def __len__(self):
        return len(self.positions)

    @staticmethod
    def concatenate(parts):
        parts = list(parts)
        if not parts:
            raise DomainError("no point clouds to concatenate")
        return FrustumPoints(
            np.concatenate([p.positions for p in parts]),
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.camera for p in parts]),
            np.concatenate([p.timestamp for p in parts]),
        )


@dataclass(frozen=True, eq=False)
class PillarGrid:
    values: np.ndarray      # (nx, ny, C)
    spec: GridSpec = field(default_factory=GridSpec)
    n_dropped: int = 0

    @property
    def channels(self):
        return self.values.shape[-1]


# -- pinhole ---------------------------------------------------------------

def pixel_to_camera(cam, pixel, depth):
    """Back-project pixel(s) ``(u, v)`` at ``depth`` into the camera frame."""
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth <= 0):
        raise DomainError("depth must be positive")
    uv = np.asarray(pixel, dtype=np.float64)
    u, v = uv[..., 0], uv[..., 1]
    if np.any((u < 0) | (u > cam.width) | (v < 0) | (v > cam.height)):
        raise DomainError("pixel outside image bounds")
    rays = np.stack([u, v, np.ones_like(u)], axis=-1) @ np.linalg.inv(cam.intrinsics).T
    return rays * depth[..., None]


def camera_to_ego(cam, points):
    return np.asarray(points) @ cam.rotation.T + cam.translation


def ego_to_camera(cam, points):
    return (np.asarray(points) - cam.translation) @ cam.rotation


def project_point(cam, point_cam):
    """Forward pinhole projection of camera-frame point(s) to ``(u, v)``."""
    p = np.asarray(point_cam, dtype=np.float64) @ cam.intrinsics.T
    return p[..., :2] / p[..., 2:3]


def unproject_pixel(cam, pixel, depth):
    """Lift pixel ``(u, v)`` at metric ``depth`` to an ego-frame 3-D point."""
    return camera_to_ego(cam, pixel_to_camera(cam, pixel, depth))


# -- lifting -----------------------------------------------------------------

def scale_features(f, pi, atol=1e-6):
    """Distribute a feature vector over depth bins: row ``d`` is ``pi[d] * f``."""
    f = np.asarray(f, dtype=np.float64)
    pi = check_distribution(pi, atol=atol, name="depth distribution")
    return pi[..., :, None] * f[..., None, :]


def lift_camera(cam, img, depths, camera_index=0, timestamp=0):
    """Turn one feature image into its ``H*W*|D|`` frustum points.

    Points are ordered row-major over pixels with depth varying fastest;
    pixel ``(row, col)`` is sampled at its center ``(col + 0.5, row + 0.5)``.
    """
    H, W = img.dims
    if (H, W) != (cam.height, cam.width):
        raise DomainError(f"image is {H}x{W} but camera expects {cam.height}x{cam.width}")
    D = depths.values
    rows, cols = np.meshgrid(np.arange(H), np.arange(W), indexing="ij")
    uv = np.stack([cols + 0.5, rows + 0.5], axis=-1).reshape(-1, 1, 2)
    uv = np.broadcast_to(uv, (H * W, len(D), 2))
    pts = unproject_pixel(cam, uv, np.broadcast_to(D, (H * W, len(D))))
    feats = scale_features(img.features.reshape(H * W, -1), img.depth_dist.reshape(H * W, -1))
    n = H * W * len(D)
    return FrustumPoints(
        pts.reshape(n, 3),
        feats.reshape(n, -1),
        np.full(n, camera_index, dtype=np.int64),
        np.full(n, timestamp, dtype=np.int64),
    )


def pool_pillars(points, spec=None, mode="sum"):
    """Pool frustum points into infinitely tall BEV pillars.

    Points outside the grid are dropped and counted in ``n_dropped``.
    Accumulation runs in point order, so the result does not depend on how
    the caller parallelized lifting.
    """
    spec = spec or GridSpec()
    if mode not in ("sum", "mean"):
        raise ConfigurationError(f"unknown pooling mode {mode!r}")
    i, j = spec.cell_index(points.positions[:, 0], points.positions[:, 1])
    keep = spec.in_range(i, j)
    C = points.features.shape[1]
    flat = i[keep] * spec.ny + j[keep]
    out = np.zeros((spec.nx * spec.ny, C))
    np.add.at(out, flat, points.features[keep])
    if mode == "mean":
        counts = np.bincount(flat, minlength=spec.nx * spec.ny)
        nz = counts > 0
        out[nz] /= counts[nz, None]
    return PillarGrid(out.reshape(spec.nx, spec.ny, C), spec, int((~keep).sum()))


def assemble_bev(frames, n_frames=N_PAST_FRAMES):
    """Concatenate per-frame pillar grids along channels, in the given (oldest-first) order."""
    frames = list(frames)
    if len(frames) != n_frames:
        raise DomainError(f"expected {n_frames} frames, got {len(frames)}")
    shapes = {g.values.shape for g in frames}
    if len(shapes) != 1:
        raise DomainError(f"frames disagree in shape: {sorted(shapes)}")
    return np.concatenate([g.values for g in frames], axis=-1)


class PillarLifter(TransformerMixin, BaseEstimator):
    """Stateless transformer: past multi-camera feature images -> BEV feature map.

    ``transform`` takes a sequence of frames (oldest first), each a sequence
    of :class:`FeatureImage`, one per camera in ``cameras`` order.

    Parameters
    ----------
    cameras : list of CameraModel
    depths : DepthSet, default=None
    grid : GridSpec, default=None
    pooling : {"sum", "mean"}, default="sum"
    n_frames : int, default=5
    """

    def __init__(self, cameras, depths=None, grid=None, pooling="sum", n_frames=N_PAST_FRAMES):
        self.cameras = cameras
        self.depths = depths
        self.grid = grid
        self.pooling = pooling
        self.n_frames = n_frames

    def fit(self, X=None, y=None):
        return self

    def lift_frame(self, images, timestamp=0):
        images = list(images)
        if len(images) != len(self.cameras):
            raise DomainError(f"expected {len(self.cameras)} camera images, got {len(images)}")
        depths = self.depths or DepthSet()
        clouds = [
            lift_camera(cam, img, depths, camera_index=k + 1, timestamp=timestamp)
            for k, (cam, img) in enumerate(zip(self.cameras, images))
        ]
        return pool_pillars(FrustumPoints.concatenate(clouds), self.grid, self.pooling)

    def transform(self, X):
        grids = [self.lift_frame(frame, timestamp=t) for t, frame in enumerate(X)]
        return assemble_bev(grids, self.n_frames)


# -- rig config and toy featurizer -------------------------------------------

def load_rig(path):
    """Read a camera rig from an INI file.

    Each ``[cameraK]`` section holds ``intrinsics`` (9 numbers, row-major),
    ``extrinsics`` (16 numbers, row-major camera->ego), ``height`` and ``width``.
    """
    parser = configparser.ConfigParser()
    if not parser.read(path):
        raise FileNotFoundError(path)
    sections = sorted(
        (s for s in parser.sections() if s.lower().startswith("camera")),
        key=lambda s: int(s[len("camera"):]),
    )
    cams = []
    for name in sections:
        sec = parser[name]
        try:
            K = np.array(sec["intrinsics"].split(), dtype=float).reshape(3, 3)
            E = np.array(sec["extrinsics"].split(), dtype=float).reshape(4, 4)
            cams.append(CameraModel(K, E, int(sec["height"]), int(sec["width"])))
        except (KeyError, ValueError) as exc:
            raise FormatError(f"{path}: section [{name}]: {exc}") from exc
    return cams


def save_rig(path, cameras):
    parser = configparser.ConfigParser()
    for k, cam in enumerate(cameras, start=1):
        parser[f"camera{k}"] = {
            "intrinsics": " ".join(repr(float(v)) for v in cam.intrinsics.ravel()),
            "extrinsics": " ".join(repr(float(v)) for v in cam.extrinsics.ravel()),
            "height": str(cam.height),
            "width": str(cam.width),
        }
    with Path(path).open("w") as fh:
        parser.write(fh)


def surround_rig(height=8, width=12, focal=6.0, mount_height=1.5):
    """Six cameras facing front, front-left, front-right, back, back-left, back-right."""
    yaws = np.deg2rad([0.0, 55.0, -55.0, 180.0, 110.0, -110.0])
    # camera axes (x right, y down, z forward) expressed in ego coordinates for yaw 0
    base = np.array([[0.0, 0.0, 1.0], [-1.0, 0.0, 0.0], [0.0, -1.0, 0.0]])
    K = np.array([[focal, 0, width / 2], [0, focal, height / 2], [0, 0, 1.0]])
    cams = []
    for yaw in yaws:
        c, s = np.cos(yaw), np.sin(yaw)
        Rz = np.array([[c, -s, 0], [s, c, 0], [0, 0, 1.0]])
        E = np.eye(4)
        E[:3, :3] = Rz @ base
        E[:3, 3] = [0.0, 0.0, mount_height]
        cams.append(CameraModel(K, E, height, width))
    return cams


def toy_featurize(rgb, out_hw, n_depths, temperature=1.0):
    """Cheap stand-in for a CNN backbone.

    Features are RGB averages over non-overlapping patches.  The depth
    distribution is a softmax over inverse distances between the patch's
    gray level and ``n_depths`` evenly spaced gray levels.
    """
    rgb = as_float_array(rgb, ndim=3, name="rgb")
    H, W = out_hw
    h0, w0 = rgb.shape[:2]
    if h0 % H or w0 % W:
        raise DomainError(f"image {h0}x{w0} not divisible into {H}x{W} patches")
    patches = rgb.reshape(H, h0 // H, W, w0 // W, -1).mean(axis=(1, 3))
    gray = patches.mean(axis=-1, keepdims=True)
    levels = np.linspace(0.0, 1.0, n_depths)
    scores = 1.0 / (0.1 + np.abs(gray - levels))
    pi = softmax(temperature * scores, axis=-1)
    return FeatureImage(patches, pi)
