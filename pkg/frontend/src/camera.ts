/** Orbit camera: spherical coordinates around a target point, z-up. */

import type { Meta, SceneCamera, Vec3 } from "./types.js";

export interface OrbitState {
  /** Angle in the xy plane, radians; 0 looks down the -x axis. */
  azimuth: number;
  /** Angle above the xy plane, radians; clamped short of the poles. */
  elevation: number;
  distance: number;
  target: Vec3;
  fovDeg: number;
  width: number;
  height: number;
}

const MAX_ELEVATION = Math.PI / 2 - 1e-3;

export function clampElevation(e: number): number {
  return Math.min(MAX_ELEVATION, Math.max(-MAX_ELEVATION, e));
}

export function domainCenter(meta: Meta): Vec3 {
  return meta.domain.map(([lo, hi]) => 0.5 * (lo + hi)) as Vec3;
}

export function domainDiagonal(meta: Meta): number {
  return Math.hypot(...meta.domain.map(([lo, hi]) => hi - lo));
}

/** Camera framing the whole domain from a three-quarter view. */
export function defaultOrbit(meta: Meta, width = 640, height = 480): OrbitState {
  return {
    azimuth: Math.PI / 4,
    elevation: Math.PI / 8,
    distance: 1.8 * domainDiagonal(meta),
    target: domainCenter(meta),
    fovDeg: 45,
    width,
    height,
  };
}

export function eyePosition(o: OrbitState): Vec3 {
  const ce = Math.cos(o.elevation);
  return [
    o.target[0] + o.distance * ce * Math.cos(o.azimuth),
    o.target[1] + o.distance * ce * Math.sin(o.azimuth),
    o.target[2] + o.distance * Math.sin(o.elevation),
  ];
}

/** Serializes the orbit into the scene camera block. */
export function toSceneCamera(o: OrbitState): SceneCamera {
  return {
    eye: eyePosition(o),
    look_at: [...o.target] as Vec3,
    up: [0, 0, 1],
    fov_deg: o.fovDeg,
    width: o.width,
    height: o.height,
  };
}

export function rotate(o: OrbitState, dAzimuth: number, dElevation: number): OrbitState {
  return {
    ...o,
    azimuth: o.azimuth + dAzimuth,
    elevation: clampElevation(o.elevation + dElevation),
  };
}

export function zoom(o: OrbitState, factor: number): OrbitState {
  return { ...o, distance: Math.max(1e-6, o.distance * factor) };
}

export function pan(o: OrbitState, dx: number, dy: number): OrbitState {
  // move the target in the camera's right/up plane
  const basis = cameraBasis(o);
  const scale = o.distance * Math.tan((o.fovDeg * Math.PI) / 360);
  const target = o.target.map(
    (c, i) => c + scale * (dx * basis.right[i] + dy * basis.up[i]),
  ) as Vec3;
  return { ...o, target };
}

export interface CameraBasis {
  forward: Vec3;
  right: Vec3;
  up: Vec3;
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(...v);
  return [v[0] / n, v[1] / n, v[2] / n];
}

function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

/** Orthonormal view frame; matches the service's ray construction. */
export function cameraBasis(o: OrbitState): CameraBasis {
  const eye = eyePosition(o);
  const forward = normalize(
    o.target.map((c, i) => c - eye[i]) as Vec3,
  );
  const right = normalize(cross(forward, [0, 0, 1]));
  const up = cross(right, forward);
  return { forward, right, up };
}

/**
 * The world-space ray through continuous canvas point (cx, cy); the center
 * of pixel (px, py) is (px + 0.5, py + 0.5), matching the service.
 */
export function pixelRay(o: OrbitState, cx: number, cy: number): { origin: Vec3; dir: Vec3 } {
  const basis = cameraBasis(o);
  const tanHalf = Math.tan((o.fovDeg * Math.PI) / 360);
  const aspect = o.width / o.height;
  const u = (cx / o.width) * 2 - 1;
  const v = 1 - (cy / o.height) * 2;
  const dir = normalize([0, 1, 2].map(
    (i) =>
      basis.forward[i] +
      u * aspect * tanHalf * basis.right[i] +
      v * tanHalf * basis.up[i],
  ) as Vec3);
  return { origin: eyePosition(o), dir };
}
