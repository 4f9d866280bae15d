/** Viewer state and its round trip through the shared scene JSON schema. */

import { defaultOrbit, toSceneCamera, type OrbitState } from "./camera.js";
import { TransferEditor } from "./transfer.js";
import type {
  IntegratorDoc,
  Meta,
  RenderSettingsDoc,
  SceneCamera,
  SceneDoc,
  TfPoint,
  Vec3,
} from "./types.js";

export interface ViewerState {
  orbit: OrbitState;
  transfer: TransferEditor;
  seeds: Vec3[];
  integrator: IntegratorDoc;
  settings: RenderSettingsDoc;
  tubeRadius: number;
}

export function defaultState(meta: Meta, width = 640, height = 480): ViewerState {
  return {
    orbit: defaultOrbit(meta, width, height),
    transfer: new TransferEditor(),
    seeds: [],
    integrator: { method: "RKF45", mode: "embedded", tol: 1e-4, t_max: 1.0 },
    settings: { supersamples: 4, background: [0, 0, 0] },
    tubeRadius: 0.01,
  };
}

/**
 * The full scene document.  Feeding this (plus a `dataset` path) to the
 * CLI reproduces the displayed frame; the service accepts it as-is.
 */
export function exportScene(state: ViewerState): SceneDoc {
  const doc: SceneDoc = {
    camera: toSceneCamera(state.orbit),
    transfer_function: state.transfer.points,
    settings: { ...state.settings },
  };
  if (state.seeds.length > 0) {
    doc.seeds = { points: state.seeds.map((s) => [...s] as Vec3) };
    doc.integrator = { ...state.integrator };
    doc.tube_radius = state.tubeRadius;
  }
  return doc;
}

/** Body for POST /render (the service refuses dataset paths). */
export function renderRequest(state: ViewerState): SceneDoc {
  return {
    camera: toSceneCamera(state.orbit),
    transfer_function: state.transfer.points,
    settings: { ...state.settings },
  };
}

/** Body for POST /streamlines. */
export function streamlinesRequest(state: ViewerState): SceneDoc {
  return {
    seeds: { points: state.seeds.map((s) => [...s] as Vec3) },
    integrator: { ...state.integrator },
  };
}

/** Body for POST /streamline_image. */
export function streamlineImageRequest(state: ViewerState): SceneDoc {
  return {
    ...streamlinesRequest(state),
    camera: toSceneCamera(state.orbit),
    tube_radius: state.tubeRadius,
  };
}

/**
 * Rebuilds viewer state from an exported scene.  The orbit is recovered
 * from the camera block, so export -> import -> export is the identity.
 */
export function importScene(doc: SceneDoc): ViewerState {
  if (!doc.camera) throw new Error("scene has no camera");
  const orbit = orbitFromCamera(doc.camera);
  const transfer = new TransferEditor(doc.transfer_function as TfPoint[]);
  return {
    orbit,
    transfer,
    seeds: (doc.seeds?.points ?? []).map((s) => [...s] as Vec3),
    integrator: doc.integrator
      ? { ...doc.integrator }
      : { method: "RKF45", mode: "embedded", tol: 1e-4, t_max: 1.0 },
    settings: { ...(doc.settings ?? {}) },
    tubeRadius: doc.tube_radius ?? 0.01,
  };
}

function orbitFromCamera(cam: SceneCamera): OrbitState {
  const d = cam.eye.map((c, i) => c - cam.look_at[i]) as Vec3;
  const distance = Math.hypot(...d);
  if (distance === 0) throw new Error("camera eye coincides with target");
  return {
    azimuth: Math.atan2(d[1], d[0]),
    elevation: Math.asin(d[2] / distance),
    distance,
    target: [...cam.look_at] as Vec3,
    fovDeg: cam.fov_deg,
    width: cam.width,
    height: cam.height,
  };
}
