/** Typed client for the render service HTTP API. */

export interface SceneMeta {
  aabb: { b_min: number[]; b_max: number[] };
  grid_resolution: number[];
  suggested_radius: number;
  default_intrinsics: { width: number; height: number; fx: number; fy: number; cx: number; cy: number };
}

export interface RenderRequestBody {
  pose: number[];
  width: number;
  height: number;
  focal_scale?: number;
  quality?: { k?: number; epsilon?: number };
}

export interface Frame {
  blob: Blob;
  renderMillis: number;
  queries: number;
}

export type FetchLike = (input: string, init?: RequestInit) => Promise<Response>;

export async function fetchMeta(baseUrl: string, fetchImpl: FetchLike = fetch): Promise<SceneMeta> {
  const res = await fetchImpl(`${baseUrl}/meta`);
  if (!res.ok) {
    throw new Error(`meta failed: ${res.status} ${await res.text()}`);
  }
  return (await res.json()) as SceneMeta;
}

export async function renderFrame(
  baseUrl: string,
  body: RenderRequestBody,
  fetchImpl: FetchLike = fetch
): Promise<Frame> {
  const res = await fetchImpl(`${baseUrl}/render`, {
    method: "POST",
    headers: { "Content-Type": "application/json" },
    body: JSON.stringify(body),
  });
  if (!res.ok) {
    throw new Error(`render failed: ${res.status} ${await res.text()}`);
  }
  return {
    blob: await res.blob(),
    renderMillis: parseFloat(res.headers.get("X-Render-Millis") ?? "NaN"),
    queries: parseInt(res.headers.get("X-Queries") ?? "-1", 10),
  };
}
