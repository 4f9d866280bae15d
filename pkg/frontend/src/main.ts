/** DOM wiring: canvas, mouse controls, TF editor strip, export/import. */

import { ApiClient, ServiceError } from "./api.js";
import { rotate, zoom } from "./camera.js";
import { FrameRequester } from "./net.js";
import { defaultPlane, placeSeed } from "./seeds.js";
import {
  defaultState,
  exportScene,
  importScene,
  renderRequest,
  streamlineImageRequest,
  type ViewerState,
} from "./state.js";
import type { Meta, SceneDoc } from "./types.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing #${id}`);
  return node as T;
}

async function start(): Promise<void> {
  const api = new ApiClient("");
  const canvas = el<HTMLCanvasElement>("frame");
  const tfCanvas = el<HTMLCanvasElement>("tf");
  const banner = el<HTMLDivElement>("banner");
  const ctx = canvas.getContext("2d")!;

  let meta: Meta;
  try {
    meta = await api.meta();
  } catch (err) {
    banner.textContent = `service unreachable: ${err}`;
    banner.hidden = false;
    return;
  }
  let state: ViewerState = defaultState(meta, canvas.width, canvas.height);
  const isVector = meta.range_dim === 3;

  const showFrame = async (png: Uint8Array) => {
    const blob = new Blob([png as BlobPart], { type: "image/png" });
    const bitmap = await createImageBitmap(blob);
    ctx.drawImage(bitmap, 0, 0, canvas.width, canvas.height);
    banner.hidden = true;
  };

  const requester = new FrameRequester<SceneDoc, Uint8Array>(
    (scene) =>
      isVector ? api.streamlineImage(scene) : api.render(scene),
    (png) => void showFrame(png),
    (err) => {
      banner.textContent =
        err instanceof ServiceError
          ? `${err.code}: ${err.message}`
          : `connection lost, retrying: ${err}`;
      banner.hidden = false;
    },
  );

  const refresh = () => {
    if (isVector && state.seeds.length === 0) return;
    requester.update(
      isVector ? streamlineImageRequest(state) : renderRequest(state),
    );
  };

  // -- mouse: drag orbits, wheel zooms, shift-click drops a seed ----------
  let dragging = false;
  let last: [number, number] = [0, 0];
  canvas.addEventListener("mousedown", (e) => {
    if (e.shiftKey && isVector) {
      const rect = canvas.getBoundingClientRect();
      const seed = placeSeed(
        state.orbit,
        meta,
        defaultPlane(meta, state.orbit),
        e.clientX - rect.left,
        e.clientY - rect.top,
      );
      if (seed) {
        state.seeds.push(seed);
        refresh();
      } else {
        banner.textContent = "click lands outside the domain";
        banner.hidden = false;
      }
      return;
    }
    dragging = true;
    last = [e.clientX, e.clientY];
  });
  window.addEventListener("mouseup", () => (dragging = false));
  window.addEventListener("mousemove", (e) => {
    if (!dragging) return;
    const dx = e.clientX - last[0];
    const dy = e.clientY - last[1];
    last = [e.clientX, e.clientY];
    state.orbit = rotate(state.orbit, -dx * 0.01, dy * 0.01);
    refresh();
  });
  canvas.addEventListener("wheel", (e) => {
    e.preventDefault();
    state.orbit = zoom(state.orbit, e.deltaY > 0 ? 1.1 : 1 / 1.1);
    refresh();
  });

  // -- transfer-function strip: click adds, drag moves value/alpha --------
  const drawTf = () => {
    const g = tfCanvas.getContext("2d")!;
    const { width: w, height: h } = tfCanvas;
    for (let x = 0; x < w; x++) {
      const [r, gg, b, a] = state.transfer.sample(x / (w - 1));
      g.fillStyle = `rgb(${255 * r},${255 * gg},${255 * b})`;
      g.fillRect(x, 0, 1, h);
      g.fillStyle = "rgba(0,0,0,0.6)";
      g.fillRect(x, 0, 1, (1 - a) * h);
    }
    g.fillStyle = "#fff";
    for (const p of state.transfer.points) {
      g.beginPath();
      g.arc(p[0] * (w - 1), (1 - p[4]) * h, 4, 0, 2 * Math.PI);
      g.fill();
    }
  };
  let tfDrag = -1;
  const tfPos = (e: MouseEvent): [number, number] => {
    const rect = tfCanvas.getBoundingClientRect();
    return [
      (e.clientX - rect.left) / tfCanvas.width,
      1 - (e.clientY - rect.top) / tfCanvas.height,
    ];
  };
  tfCanvas.addEventListener("mousedown", (e) => {
    const [v, a] = tfPos(e);
    const pts = state.transfer.points;
    tfDrag = pts.findIndex((p) => Math.abs(p[0] - v) < 0.03);
    if (tfDrag < 0) tfDrag = state.transfer.add(v, a);
  });
  window.addEventListener("mousemove", (e) => {
    if (tfDrag < 0) return;
    const [v, a] = tfPos(e);
    state.transfer.move(tfDrag, v, a);
    drawTf();
    refresh();
  });
  window.addEventListener("mouseup", () => (tfDrag = -1));

  // -- buttons ------------------------------------------------------------
  el<HTMLButtonElement>("clear-seeds").addEventListener("click", () => {
    state.seeds = [];
    refresh();
  });
  el<HTMLButtonElement>("export").addEventListener("click", () => {
    const blob = new Blob([JSON.stringify(exportScene(state), null, 2)], {
      type: "application/json",
    });
    const a = document.createElement("a");
    a.href = URL.createObjectURL(blob);
    a.download = "scene.json";
    a.click();
  });
  el<HTMLInputElement>("import").addEventListener("change", async (e) => {
    const file = (e.target as HTMLInputElement).files?.[0];
    if (!file) return;
    state = importScene(JSON.parse(await file.text()));
    drawTf();
    refresh();
  });

  drawTf();
  refresh();
}

start();
