// Typed client for the /v1 endpoints. The UI never computes embeddings or
// predictions itself; every number rendered comes from one of these calls.

export interface GeoPolygon {
  type: "Polygon" | "MultiPolygon";
  coordinates: unknown;
}

export interface MetaResponse {
  graph: {
    types: { name: string; spatial: boolean; count: number }[];
    relations: { name: string; count: number }[];
    n_spatial: number;
    n_virtual: number;
  };
  model: Record<string, unknown>;
  channels: string[];
  pool_size: number;
  tasks: string[];
  counters: Record<string, number>;
}

export interface EmbedResponse {
  embeddings: (number[] | null)[];
  token_counts: Record<string, number>[];
  errors: (string | null)[];
}

export interface SimilarEntry {
  score: number;
  source: "pool" | "session";
  boundary: GeoPolygon | null;
}

export interface PredictResponse {
  task: string;
  prediction_z: number;
  batch_mean: number;
  batch_sd: number;
  batch_size: number;
}

export interface TokenPoint {
  type: string;
  x: number;
  y: number;
}

export class ApiError extends Error {
  constructor(
    public status: number,
    public error: string,
    public detail: string,
  ) {
    super(`${error}: ${detail}`);
  }
}

async function parseError(res: Response): Promise<ApiError> {
  let error = "http_error";
  let detail = res.statusText;
  try {
    const body = await res.json();
    if (body && typeof body === "object") {
      error = body.error ?? error;
      detail = body.detail ?? detail;
    }
  } catch {
    // non-JSON error body; keep defaults
  }
  return new ApiError(res.status, error, detail);
}

export class ApiClient {
  constructor(public baseUrl: string) {}

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await fetch(this.baseUrl + path, init);
    if (!res.ok) {
      throw await parseError(res);
    }
    return (await res.json()) as T;
  }

  private post<T>(path: string, body: unknown): Promise<T> {
    return this.request<T>(path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
  }

  meta(): Promise<MetaResponse> {
    return this.request<MetaResponse>("/v1/meta");
  }

  embed(boundaries: unknown[]): Promise<EmbedResponse> {
    return this.post<EmbedResponse>("/v1/embed", { boundaries });
  }

  similar(boundary: unknown, k: number): Promise<{ similar: SimilarEntry[] }> {
    return this.post<{ similar: SimilarEntry[] }>("/v1/similar", { boundary, k });
  }

  predict(boundary: unknown, task: string): Promise<PredictResponse> {
    return this.post<PredictResponse>("/v1/predict", { boundary, task });
  }

  tokens(bbox: [number, number, number, number], limit = 4000): Promise<{ tokens: TokenPoint[] }> {
    const q = `bbox=${bbox.join(",")}&limit=${limit}`;
    return this.request<{ tokens: TokenPoint[] }>(`/v1/tokens?${q}`);
  }
}
