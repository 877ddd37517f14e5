"""Camera models for the surround-view rig.

Three pieces live here. A :class:`FisheyeModel` maps rays to raw fisheye
pixels through an odd-order radial polynomial in the incidence angle,
with the inverse recovered by a bracketed 1D root find. A
:class:`Homography` warps undistorted ground-plane views into the
synthetic bird's-eye view and can be estimated from point pairs by the
normalized DLT. A :class:`BevCameraModel` ties the stitched BEV image to
the vehicle frame: the synthetic camera hovers 1 m above the floor
looking straight down, so its unit-depth plane is the ground and pixel
coordinates convert to vehicle-frame metric coordinates through the
intrinsics alone.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np
from scipy.optimize import brentq

from .geometry import Point3, Transform3


class CameraError(Exception):
    """Base class for camera-model failures."""


class OutOfFieldError(CameraError):
    """A pixel or ray falls outside the calibrated field of view."""


class ProjectiveError(CameraError):
    """A projective mapping sent a point to infinity (w ~ 0)."""


class DegenerateGeometryError(CameraError):
    """Input geometry does not determine the requested model."""


class FisheyeModel:
    """Equidistant-family fisheye camera.

    The image radius of a ray with incidence angle ``theta`` is
    ``focal * (k1*theta + k2*theta^3 + k3*theta^5 + k4*theta^7 + k5*theta^9)``.
    The coefficient vector must make the radius strictly increasing on
    ``[0, theta_max]``, which is validated at construction; without that
    the inverse mapping would be ambiguous.
    """

    def __init__(
        self,
        coefficients: Sequence[float],
        focal: float,
        principal_point: Sequence[float],
        theta_max: float = math.radians(100.0),
    ) -> None:
        k = np.array(coefficients, dtype=float).reshape(5)
        if focal <= 0.0:
            raise ValueError("focal length must be positive")
        if not 0.0 < theta_max <= math.pi:
            raise ValueError("theta_max must lie in (0, pi]")
        # Full polynomial in theta, highest power first: k5 t^9 + ... + k1 t.
        poly = np.zeros(10)
        poly[0], poly[2], poly[4], poly[6], poly[8] = k[4], k[3], k[2], k[1], k[0]
        deriv = np.polyder(poly)
        thetas = np.linspace(0.0, theta_max, 4096)
        if np.any(np.polyval(deriv, thetas) <= 0.0):
            raise ValueError("radial polynomial is not strictly increasing on [0, theta_max]")
        self.coefficients = k
        self.focal = float(focal)
        self.principal_point = np.array(principal_point, dtype=float).reshape(2)
        self.theta_max = float(theta_max)
        self._poly = poly
        self.r_max = float(self.radius_of_theta(theta_max))

    def radius_of_theta(self, theta) -> np.ndarray:
        """Image radius in pixels for incidence angle(s) ``theta``."""
        return self.focal * np.polyval(self._poly, theta)

    def theta_of_radius(self, radius: float) -> float:
        """Invert the radial polynomial by a bracketed root find."""
        if radius < 0.0:
            raise ValueError("radius must be non-negative")
        if radius == 0.0:
            return 0.0
        if radius > self.r_max * (1.0 + 1e-12):
            raise OutOfFieldError(
                f"radius {radius:.3f} px exceeds the field-of-view limit {self.r_max:.3f} px"
            )
        r = min(radius, self.r_max)
        return float(brentq(lambda t: self.radius_of_theta(t) - r, 0.0, self.theta_max, xtol=1e-14))

    def project(self, ray) -> np.ndarray:
        """Project a camera-frame ray direction to a fisheye pixel."""
        d = np.asarray(ray, dtype=float).reshape(3)
        norm = np.linalg.norm(d)
        if norm < 1e-12:
            raise ValueError("ray direction has near-zero norm")
        theta = math.atan2(math.hypot(d[0], d[1]), d[2])
        if theta > self.theta_max:
            raise OutOfFieldError(
                f"incidence angle {math.degrees(theta):.2f} deg exceeds "
                f"{math.degrees(self.theta_max):.2f} deg"
            )
        phi = math.atan2(d[1], d[0])
        r = float(self.radius_of_theta(theta))
        return self.principal_point + r * np.array([math.cos(phi), math.sin(phi)])

    def unproject(self, pixel) -> np.ndarray:
        """Back-project a pixel to a unit ray in the camera frame."""
        px = np.asarray(pixel, dtype=float).reshape(2)
        offset = px - self.principal_point
        radius = float(np.linalg.norm(offset))
        theta = self.theta_of_radius(radius)
        if radius == 0.0:
            return np.array([0.0, 0.0, 1.0])
        phi = math.atan2(offset[1], offset[0])
        st = math.sin(theta)
        return np.array([st * math.cos(phi), st * math.sin(phi), math.cos(theta)])


class Homography:
    """Plane-to-plane projective map stored as a 3x3 matrix with h33 = 1."""

    def __init__(self, matrix) -> None:
        h = np.array(matrix, dtype=float)
        if h.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {h.shape}")
        if abs(h[2, 2]) < 1e-12:
            raise DegenerateGeometryError("cannot normalize homography with h33 ~ 0")
        if abs(np.linalg.det(h)) < 1e-12:
            raise DegenerateGeometryError("homography matrix is singular")
        h = h / h[2, 2]
        h.setflags(write=False)
        self.matrix = h

    def apply(self, points) -> np.ndarray:
        """Map a point (2,) or an (N, 2) array of points."""
        pts = np.asarray(points, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        homog = np.column_stack([pts, np.ones(len(pts))]) @ self.matrix.T
        w = homog[:, 2]
        if np.any(np.abs(w) < 1e-12):
            raise ProjectiveError("point maps to infinity under this homography")
        out = homog[:, :2] / w[:, None]
        return out[0] if single else out

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


def _normalizing_transform(pts: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to the origin, mean radius to sqrt(2)."""
    centroid = pts.mean(axis=0)
    mean_dist = float(np.mean(np.linalg.norm(pts - centroid, axis=1)))
    if mean_dist < 1e-12:
        raise DegenerateGeometryError("all points coincide; cannot normalize")
    s = math.sqrt(2.0) / mean_dist
    return np.array([[s, 0.0, -s * centroid[0]], [0.0, s, -s * centroid[1]], [0.0, 0.0, 1.0]])


def estimate_homography(src, dst) -> tuple[Homography, float]:
    """Fit a homography mapping ``src`` points onto ``dst`` points.

    Uses the DLT on Hartley-normalized coordinates and returns the
    least-squares model together with the RMS reprojection error over
    the inputs. Raises :class:`DegenerateGeometryError` when the point
    configuration does not pin down a unique solution (for example all
    points collinear).
    """
    s = np.asarray(src, dtype=float)
    d = np.asarray(dst, dtype=float)
    if s.shape != d.shape or s.ndim != 2 or s.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2) arrays of equal length")
    n = len(s)
    if n < 4:
        raise ValueError(f"homography estimation needs at least 4 pairs, got {n}")
    t_src = _normalizing_transform(s)
    t_dst = _normalizing_transform(d)
    sn = np.column_stack([s, np.ones(n)]) @ t_src.T
    dn = np.column_stack([d, np.ones(n)]) @ t_dst.T
    a = np.zeros((2 * n, 9))
    a[0::2, 0:3] = -sn
    a[0::2, 6:9] = dn[:, [0]] * sn
    a[1::2, 3:6] = -sn
    a[1::2, 6:9] = dn[:, [1]] * sn
    _, sing, vt = np.linalg.svd(a)
    if sing[7] <= 1e-9 * sing[0]:
        raise DegenerateGeometryError("point configuration leaves the homography ambiguous")
    h_norm = vt[-1].reshape(3, 3)
    h = np.linalg.inv(t_dst) @ h_norm @ t_src
    model = Homography(h)
    residual = model.apply(s) - d
    rms = float(np.sqrt(np.mean(np.sum(residual**2, axis=1))))
    return model, rms


class BevCameraModel:
    """Metric model of the stitched bird's-eye-view image.

    ``intrinsics`` is an upper-triangular pinhole matrix whose focal
    length encodes pixels-per-meter; ``camera_to_vehicle`` places the
    synthetic camera in the vehicle frame. The model requires that the
    camera's unit-depth plane coincides with the ground (nadir view from
    1 m up), which keeps the pixel-to-ground mapping linear and exact.
    """

    def __init__(self, intrinsics, camera_to_vehicle: Transform3, image_size=(1354, 1632)) -> None:
        k = np.array(intrinsics, dtype=float)
        if k.shape != (3, 3):
            raise ValueError("intrinsics must be 3x3")
        lower = np.array([k[1, 0], k[2, 0], k[2, 1]])
        if np.any(lower != 0.0) or k[2, 2] != 1.0:
            raise ValueError("intrinsics must be upper triangular with K[2,2] == 1")
        if k[0, 0] <= 0.0 or k[1, 1] <= 0.0:
            raise ValueError("focal lengths must be positive")
        r = camera_to_vehicle.rotation
        t = camera_to_vehicle.translation
        if abs(r[2, 0]) > 1e-9 or abs(r[2, 1]) > 1e-9 or abs(r[2, 2] + t[2]) > 1e-9:
            raise ValueError(
                "camera_to_vehicle must map the camera's unit-depth plane onto the ground "
                "(nadir view with height equal to the unit depth)"
            )
        k.setflags(write=False)
        self.intrinsics = k
        self.camera_to_vehicle = camera_to_vehicle
        self.image_size = (int(image_size[0]), int(image_size[1]))

    @staticmethod
    def standard(meters_per_pixel: float = 0.0105, image_size=(1354, 1632)) -> "BevCameraModel":
        """Nadir BEV camera over the vehicle origin, forward pointing up in the image."""
        if meters_per_pixel <= 0.0:
            raise ValueError("meters_per_pixel must be positive")
        f = 1.0 / meters_per_pixel
        w, h = image_size
        k = np.array([[f, 0.0, w / 2.0], [0.0, f, h / 2.0], [0.0, 0.0, 1.0]])
        rot = np.array([[0.0, -1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
        return BevCameraModel(k, Transform3(rot, [0.0, 0.0, 1.0]), image_size)

    @property
    def pixels_per_meter(self) -> float:
        return float(self.intrinsics[0, 0])

    def _unproject_camera(self, px: np.ndarray) -> np.ndarray:
        """Pixel(s) to camera-frame coordinates on the unit-depth plane."""
        k = self.intrinsics
        y_c = (px[..., 1] - k[1, 2]) / k[1, 1]
        x_c = (px[..., 0] - k[0, 1] * y_c - k[0, 2]) / k[0, 0]
        return np.stack([x_c, y_c, np.ones_like(x_c)], axis=-1)

    def pixel_to_vehicle(self, pixel) -> Point3:
        """Back-project one BEV pixel to a vehicle-frame ground point."""
        px = np.asarray(pixel, dtype=float).reshape(2)
        p_c = self._unproject_camera(px)
        return self.camera_to_vehicle.apply(Point3.from_array(p_c))

    def pixels_to_vehicle_xy(self, pixels) -> np.ndarray:
        """Back-project (N, 2) BEV pixels to (N, 2) vehicle-frame ground coordinates."""
        px = np.asarray(pixels, dtype=float).reshape(-1, 2)
        p_c = self._unproject_camera(px)
        p_v = self.camera_to_vehicle.apply_array(p_c)
        return p_v[:, :2]

    def vehicle_to_pixel(self, point: Point3) -> np.ndarray:
        """Project a vehicle-frame ground point into the BEV image."""
        if abs(point.z) > 1e-6:
            raise ValueError(f"point is not on the ground plane (z = {point.z})")
        p_c = self.camera_to_vehicle.inverse().apply(point)
        z = p_c.z
        if z <= 1e-12:
            raise ProjectiveError("point lies behind the BEV camera")
        k = self.intrinsics
        u = k[0, 0] * (p_c.x / z) + k[0, 1] * (p_c.y / z) + k[0, 2]
        v = k[1, 1] * (p_c.y / z) + k[1, 2]
        return np.array([u, v])


def stitch_layers(layers) -> np.ndarray:
    """Composite single-camera BEV layers; later layers win where masks overlap.

    ``layers`` is a sequence of (image, mask) pairs with identical image
    shapes; ``mask`` marks pixels each camera actually covers.
    """
    if not layers:
        raise ValueError("need at least one layer to stitch")
    first = np.asarray(layers[0][0])
    out = np.zeros_like(first)
    for image, mask in layers:
        img = np.asarray(image)
        m = np.asarray(mask, dtype=bool)
        if img.shape != first.shape or m.shape != first.shape[:2]:
            raise ValueError("all layers must share the same image and mask shape")
        out[m] = img[m]
    return out
