/** Streamline seed placement: unproject canvas clicks onto a slice plane. */

import { cameraBasis, pixelRay, type OrbitState } from "./camera.js";
import type { Meta, Vec3 } from "./types.js";

export type Axis = 0 | 1 | 2;

export interface SlicePlane {
  axis: Axis;
  /** Plane coordinate along `axis`, in domain units. */
  value: number;
}

/**
 * The default plane: axis-aligned, facing the camera (the axis with the
 * largest |view direction| component), through the domain midpoint.
 */
export function defaultPlane(meta: Meta, orbit: OrbitState): SlicePlane {
  const { forward } = cameraBasis(orbit);
  let axis: Axis = 0;
  for (let a = 1 as Axis; a < 3; a++) {
    if (Math.abs(forward[a]) > Math.abs(forward[axis])) axis = a;
  }
  const [lo, hi] = meta.domain[axis];
  return { axis, value: 0.5 * (lo + hi) };
}

const EPS = 1e-9;

/**
 * Unprojects a canvas click to a domain point on the slice plane.
 * Returns null when the ray is parallel to the plane, hits it behind
 * the camera, or lands outside the domain box.
 */
export function placeSeed(
  orbit: OrbitState,
  meta: Meta,
  plane: SlicePlane,
  cx: number,
  cy: number,
): Vec3 | null {
  const { origin, dir } = pixelRay(orbit, cx, cy);
  if (Math.abs(dir[plane.axis]) < EPS) return null;
  const t = (plane.value - origin[plane.axis]) / dir[plane.axis];
  if (t <= 0) return null;
  const p = origin.map((c, i) => c + t * dir[i]) as Vec3;
  p[plane.axis] = plane.value; // exact on the plane
  for (let a = 0; a < 3; a++) {
    const [lo, hi] = meta.domain[a];
    if (p[a] < lo - EPS || p[a] > hi + EPS) return null;
    p[a] = Math.min(hi, Math.max(lo, p[a]));
  }
  return p;
}
