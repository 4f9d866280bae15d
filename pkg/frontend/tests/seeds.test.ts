import { describe, expect, it } from "vitest";

import { defaultOrbit } from "../src/camera.js";
import { defaultPlane, placeSeed } from "../src/seeds.js";
import type { Meta } from "../src/types.js";

const META: Meta = {
  dataset: "t.json",
  domain: [
    [0, 1],
    [0, 1],
    [0, 1],
  ],
  degrees: [1, 1, 1],
  range_dim: 3,
  element_count: 8,
  bspline_count: 24,
  scalar_range: null,
  speed_range: [0, 1],
};

describe("seed placement", () => {
  it("default plane faces the camera through the domain midpoint", () => {
    // looking straight down the x axis: slice plane must be x = mid
    const o = { ...defaultOrbit(META), azimuth: 0, elevation: 0 };
    const plane = defaultPlane(META, o);
    expect(plane.axis).toBe(0);
    expect(plane.value).toBeCloseTo(0.5, 12);
  });

  it("canvas-center click on the default plane hits the domain center", () => {
    const orbit = defaultOrbit(META, 640, 480);
    const plane = defaultPlane(META, orbit);
    const seed = placeSeed(orbit, META, plane, 320, 240);
    expect(seed).not.toBeNull();
    for (let a = 0; a < 3; a++) {
      expect(Math.abs(seed![a] - 0.5)).toBeLessThanOrEqual(1e-6);
    }
  });

  it("center click works from any view direction", () => {
    for (const [az, el] of [
      [0.3, 0.9],
      [2.4, -0.7],
      [-1.1, 0.1],
    ]) {
      const orbit = {
        ...defaultOrbit(META, 200, 100),
        azimuth: az,
        elevation: el,
      };
      const seed = placeSeed(orbit, META, defaultPlane(META, orbit), 100, 50);
      expect(seed).not.toBeNull();
      for (let a = 0; a < 3; a++) {
        expect(Math.abs(seed![a] - 0.5)).toBeLessThanOrEqual(1e-6);
      }
    }
  });

  it("clicks unprojecting outside the domain are rejected", () => {
    const orbit = defaultOrbit(META, 640, 480);
    const plane = defaultPlane(META, orbit);
    expect(placeSeed(orbit, META, plane, 0, 0)).toBeNull();
    expect(placeSeed(orbit, META, plane, 639, 479)).toBeNull();
  });

  it("rays parallel to the slice plane are rejected", () => {
    const orbit = { ...defaultOrbit(META), azimuth: 0, elevation: 0 };
    // force a plane perpendicular to the camera's view plane
    const seed = placeSeed(orbit, META, { axis: 2, value: 0.5 }, 320, 240);
    expect(seed).toBeNull();
  });

  it("placed seeds lie exactly on the plane coordinate", () => {
    const orbit = defaultOrbit(META, 640, 480);
    const plane = defaultPlane(META, orbit);
    const seed = placeSeed(orbit, META, plane, 340, 250);
    expect(seed).not.toBeNull();
    expect(seed![plane.axis]).toBe(plane.value);
  });
});
