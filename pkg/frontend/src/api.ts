/** Thin typed wrapper over the render service's HTTP endpoints. */

import type { Meta, SceneDoc, StreamlineDoc } from "./types.js";

export class ServiceError extends Error {
  constructor(
    message: string,
    public readonly code: string,
    public readonly status: number,
  ) {
    super(message);
  }
}

async function raiseFor(resp: Response): Promise<never> {
  let code = "unknown";
  let message = `HTTP ${resp.status}`;
  try {
    const doc = await resp.json();
    code = doc?.error?.code ?? code;
    message = doc?.error?.message ?? message;
  } catch {
    // non-JSON error body; keep the status line
  }
  throw new ServiceError(message, code, resp.status);
}

export class ApiClient {
  constructor(
    private readonly baseUrl: string,
    private readonly fetchFn: typeof fetch = fetch,
  ) {}

  async meta(): Promise<Meta> {
    const resp = await this.fetchFn(`${this.baseUrl}/meta`);
    if (!resp.ok) await raiseFor(resp);
    return (await resp.json()) as Meta;
  }

  private async postJson(path: string, body: SceneDoc): Promise<Response> {
    const resp = await this.fetchFn(`${this.baseUrl}${path}`, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    if (!resp.ok) await raiseFor(resp);
    return resp;
  }

  /** PNG bytes of the volume rendering. */
  async render(scene: SceneDoc): Promise<Uint8Array> {
    const resp = await this.postJson("/render", scene);
    return new Uint8Array(await resp.arrayBuffer());
  }

  async streamlines(scene: SceneDoc): Promise<StreamlineDoc[]> {
    const resp = await this.postJson("/streamlines", scene);
    const doc = await resp.json();
    return doc.streamlines as StreamlineDoc[];
  }

  /** PNG bytes of the traced streamline tubes. */
  async streamlineImage(scene: SceneDoc): Promise<Uint8Array> {
    const resp = await this.postJson("/streamline_image", scene);
    return new Uint8Array(await resp.arrayBuffer());
  }
}
