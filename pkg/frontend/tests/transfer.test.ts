import { describe, expect, it } from "vitest";

import { TransferEditor } from "../src/transfer.js";
import type { TfPoint } from "../src/types.js";

function keys(tf: TransferEditor): number[] {
  return tf.points.map((p) => p[0]);
}

function isSorted(v: number[]): boolean {
  return v.every((x, i) => i === 0 || v[i - 1] < x);
}

describe("TransferEditor", () => {
  it("starts with a valid two-point ramp", () => {
    const tf = new TransferEditor();
    expect(tf.points.length).toBe(2);
    expect(isSorted(keys(tf))).toBe(true);
  });

  it("rejects unsorted or out-of-range input", () => {
    expect(
      () =>
        new TransferEditor([
          [0, 0, 0, 0, 0],
          [0, 1, 1, 1, 1],
        ]),
    ).toThrow(/strictly increase/);
    expect(
      () =>
        new TransferEditor([
          [0, 0, 0, 0, 0],
          [1, 2, 0, 0, 1],
        ]),
    ).toThrow(/\[0, 1\]/);
    expect(() => new TransferEditor([[0, 0, 0, 0, 0]] as TfPoint[])).toThrow(
      /two points/,
    );
  });

  it("add interpolates color from the neighbors", () => {
    const tf = new TransferEditor([
      [0, 0, 0, 0, 0],
      [1, 1, 0.5, 0, 1],
    ]);
    const i = tf.add(0.5);
    const p = tf.points[i];
    expect(p[0]).toBe(0.5);
    expect(p[1]).toBeCloseTo(0.5, 12);
    expect(p[2]).toBeCloseTo(0.25, 12);
    expect(isSorted(keys(tf))).toBe(true);
  });

  it("stays sorted during a drag across a neighbor", () => {
    const tf = new TransferEditor([
      [0, 0, 0, 0, 0],
      [0.4, 1, 0, 0, 0.5],
      [1, 1, 1, 1, 1],
    ]);
    // drag the middle point far past both neighbors
    tf.move(1, 2.0);
    expect(isSorted(keys(tf))).toBe(true);
    expect(tf.points[1][0]).toBeLessThan(1);
    tf.move(1, -5.0);
    expect(isSorted(keys(tf))).toBe(true);
    expect(tf.points[1][0]).toBeGreaterThan(0);
  });

  it("drag keeps the point index stable", () => {
    const tf = new TransferEditor([
      [0, 0, 0, 0, 0],
      [0.4, 1, 0, 0, 0.5],
      [1, 1, 1, 1, 1],
    ]);
    for (const v of [0.1, 0.9, 0.45, 0.02]) {
      tf.move(1, v, 0.7);
      expect(tf.points[1][4]).toBe(0.7);
      expect(isSorted(keys(tf))).toBe(true);
    }
  });

  it("clamps dragged alpha to [0, 1]", () => {
    const tf = new TransferEditor();
    tf.move(0, 0, 3.5);
    expect(tf.points[0][4]).toBe(1);
    tf.move(0, 0, -1);
    expect(tf.points[0][4]).toBe(0);
  });

  it("never removes below two points", () => {
    const tf = new TransferEditor([
      [0, 0, 0, 0, 0],
      [0.5, 1, 0, 0, 0.5],
      [1, 1, 1, 1, 1],
    ]);
    expect(tf.remove(1)).toBe(true);
    expect(tf.remove(0)).toBe(false);
    expect(tf.points.length).toBe(2);
  });

  it("adding on top of an existing key nudges, not collides", () => {
    const tf = new TransferEditor([
      [0, 0, 0, 0, 0],
      [0.5, 1, 0, 0, 0.5],
      [1, 1, 1, 1, 1],
    ]);
    tf.add(0.5);
    expect(isSorted(keys(tf))).toBe(true);
    expect(tf.points.length).toBe(4);
  });

  it("sample interpolates and clamps at the ends", () => {
    const tf = new TransferEditor([
      [0.2, 1, 0, 0, 0],
      [0.8, 0, 1, 0, 1],
    ]);
    expect(tf.sample(0)).toEqual([1, 0, 0, 0]);
    expect(tf.sample(1)).toEqual([0, 1, 0, 1]);
    const mid = tf.sample(0.5);
    expect(mid[0]).toBeCloseTo(0.5, 12);
    expect(mid[3]).toBeCloseTo(0.5, 12);
  });

  it("points getter returns copies", () => {
    const tf = new TransferEditor();
    tf.points[0][4] = 0.123;
    expect(tf.points[0][4]).not.toBe(0.123);
  });
});
