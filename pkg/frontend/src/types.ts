/** Shared shapes for the scene JSON schema and the service API. */

export type Vec3 = [number, number, number];

/** One transfer-function control point: [value, r, g, b, a]. */
export type TfPoint = [number, number, number, number, number];

export interface SceneCamera {
  eye: Vec3;
  look_at: Vec3;
  up: Vec3;
  fov_deg: number;
  width: number;
  height: number;
}

export interface RenderSettingsDoc {
  xi?: number;
  supersamples?: number;
  termination_threshold?: number;
  base_step_scale?: number;
  sampling_mode?: "adaptive" | "uniform";
  uniform_step?: number;
  lighting?: boolean;
  light_dir?: Vec3;
  background?: Vec3;
  single_trim_interval?: boolean;
  workers?: number;
}

export interface IntegratorDoc {
  method: string;
  mode: "fixed" | "embedded" | "heuristic";
  h0?: number;
  tol?: number;
  t_max?: number;
  max_samples?: number;
  precision?: "single" | "mixed" | "double";
}

/** The scene document understood by both the CLI and the HTTP service. */
export interface SceneDoc {
  camera?: SceneCamera;
  transfer_function?: TfPoint[];
  settings?: RenderSettingsDoc;
  seeds?: { points: Vec3[] };
  integrator?: IntegratorDoc;
  tube_radius?: number;
  dataset?: string;
}

export interface Meta {
  dataset: string;
  domain: [[number, number], [number, number], [number, number]];
  degrees: Vec3;
  range_dim: number;
  element_count: number;
  bspline_count: number;
  scalar_range: [number, number] | null;
  speed_range: [number, number] | null;
}

export interface StreamlineSample {
  t: number;
  x: number;
  y: number;
  z: number;
}

export interface StreamlineDoc {
  seed: Vec3;
  termination: string;
  samples: StreamlineSample[];
}
