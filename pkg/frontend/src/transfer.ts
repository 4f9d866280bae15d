/** Transfer-function editor model: a sorted list of control points. */

import type { TfPoint } from "./types.js";

const MIN_GAP = 1e-6;

function clamp01(x: number): number {
  return Math.min(1, Math.max(0, x));
}

export class TransferEditor {
  private pts: TfPoint[];

  constructor(points?: TfPoint[]) {
    this.pts = (points ?? [
      [0, 1, 1, 1, 0],
      [1, 1, 1, 1, 0.8],
    ]).map((p) => [...p] as TfPoint);
    this.pts.sort((a, b) => a[0] - b[0]);
    this.validate();
  }

  get points(): TfPoint[] {
    return this.pts.map((p) => [...p] as TfPoint);
  }

  private validate(): void {
    if (this.pts.length < 2) {
      throw new Error("transfer function needs at least two points");
    }
    for (let i = 1; i < this.pts.length; i++) {
      if (this.pts[i][0] <= this.pts[i - 1][0]) {
        throw new Error("transfer function keys must strictly increase");
      }
    }
    for (const p of this.pts) {
      for (let c = 1; c < 5; c++) {
        if (p[c] < 0 || p[c] > 1) {
          throw new Error("color/alpha components must lie in [0, 1]");
        }
      }
    }
  }

  /** Inserts a point at `value`, interpolating color from its neighbors. */
  add(value: number, alpha?: number): number {
    const sorted = this.pts;
    let i = sorted.findIndex((p) => p[0] >= value);
    if (i < 0) i = sorted.length;
    const lo = sorted[Math.max(0, i - 1)];
    const hi = sorted[Math.min(sorted.length - 1, i)];
    const span = hi[0] - lo[0];
    const t = span > 0 ? (value - lo[0]) / span : 0;
    const mix = (c: number) => lo[c] + t * (hi[c] - lo[c]);
    const pt: TfPoint = [
      value,
      mix(1),
      mix(2),
      mix(3),
      alpha ?? mix(4),
    ];
    this.pts.splice(i, 0, pt);
    this.dedupe(i);
    return this.pts.indexOf(pt);
  }

  private dedupe(inserted: number): void {
    // nudge an exact key collision so keys stay strictly increasing
    const p = this.pts[inserted];
    if (inserted > 0 && p[0] <= this.pts[inserted - 1][0]) {
      p[0] = this.pts[inserted - 1][0] + MIN_GAP;
    }
    if (inserted < this.pts.length - 1 && p[0] >= this.pts[inserted + 1][0]) {
      p[0] = this.pts[inserted + 1][0] - MIN_GAP;
    }
  }

  /**
   * Drags point `i` to (value, alpha).  The key is clamped strictly
   * between its neighbors so the list stays sorted with the point's
   * index stable during the whole drag.
   */
  move(i: number, value: number, alpha?: number): void {
    if (i < 0 || i >= this.pts.length) throw new Error("no such point");
    let v = value;
    if (i > 0) v = Math.max(v, this.pts[i - 1][0] + MIN_GAP);
    if (i < this.pts.length - 1) v = Math.min(v, this.pts[i + 1][0] - MIN_GAP);
    this.pts[i][0] = v;
    if (alpha !== undefined) this.pts[i][4] = clamp01(alpha);
  }

  setColor(i: number, r: number, g: number, b: number): void {
    if (i < 0 || i >= this.pts.length) throw new Error("no such point");
    this.pts[i][1] = clamp01(r);
    this.pts[i][2] = clamp01(g);
    this.pts[i][3] = clamp01(b);
  }

  /** Removes a point, but never below the two-point minimum. */
  remove(i: number): boolean {
    if (this.pts.length <= 2) return false;
    if (i < 0 || i >= this.pts.length) return false;
    this.pts.splice(i, 1);
    return true;
  }

  /** Piecewise-linear lookup, clamped at the ends (preview shading). */
  sample(value: number): [number, number, number, number] {
    const pts = this.pts;
    if (value <= pts[0][0]) return pts[0].slice(1) as never;
    const last = pts[pts.length - 1];
    if (value >= last[0]) return last.slice(1) as never;
    let i = 1;
    while (pts[i][0] < value) i++;
    const a = pts[i - 1];
    const b = pts[i];
    const t = (value - a[0]) / (b[0] - a[0]);
    return [1, 2, 3, 4].map((c) => a[c] + t * (b[c] - a[c])) as never;
  }
}
