// Drawn-region store: submission gating, latest-wins request handling, and
// the per-region response cache every panel reads from.

import {
  ApiClient,
  ApiError,
  EmbedResponse,
  PredictResponse,
  SimilarEntry,
} from "./api.js";
import { Vertex, cosineSimilarity, toPolygon } from "./geometry.js";

export type RegionStatus = "draft" | "pending" | "ok" | "empty" | "error";

export interface DrawnRegion {
  id: number;
  vertices: Vertex[];
  status: RegionStatus;
  embedding: number[] | null;
  tokenCounts: Record<string, number>;
  similar: SimilarEntry[];
  predictions: Record<string, PredictResponse>;
  errorDetail: string | null;
  /** raw bodies for the response drawer */
  lastResponses: Record<string, unknown>;
  seq: number;
}

export const MIN_VERTICES = 3;

export class RegionStore {
  regions = new Map<number, DrawnRegion>();
  private nextId = 1;
  onChange: (() => void) | null = null;

  constructor(private api: ApiClient) {}

  private notify() {
    this.onChange?.();
  }

  list(): DrawnRegion[] {
    return [...this.regions.values()];
  }

  get(id: number): DrawnRegion | undefined {
    return this.regions.get(id);
  }

  addRegion(vertices: Vertex[]): DrawnRegion {
    const region: DrawnRegion = {
      id: this.nextId++,
      vertices: vertices.map((v) => [v[0], v[1]]),
      status: "draft",
      embedding: null,
      tokenCounts: {},
      similar: [],
      predictions: {},
      errorDetail: null,
      lastResponses: {},
      seq: 0,
    };
    this.regions.set(region.id, region);
    this.notify();
    return region;
  }

  remove(id: number) {
    this.regions.delete(id);
    this.notify();
  }

  canSubmit(id: number): boolean {
    const r = this.regions.get(id);
    return !!r && r.vertices.length >= MIN_VERTICES;
  }

  boundaryOf(id: number) {
    const r = this.regions.get(id);
    if (!r) throw new Error(`no region ${id}`);
    return toPolygon(r.vertices);
  }

  /** Embed one region; stale responses (superseded by an edit) are dropped. */
  async submit(id: number): Promise<void> {
    const r = this.regions.get(id);
    if (!r || !this.canSubmit(id)) return;
    const seq = ++r.seq;
    r.status = "pending";
    r.errorDetail = null;
    this.notify();
    let body: EmbedResponse;
    try {
      body = await this.api.embed([this.boundaryOf(id)]);
    } catch (e) {
      if (r.seq !== seq) return; // superseded while in flight
      r.status = "error";
      r.errorDetail = e instanceof ApiError ? `${e.error}: ${e.detail}` : String(e);
      this.notify();
      return;
    }
    if (r.seq !== seq) return;
    r.lastResponses["embed"] = body;
    if (body.errors[0] === "empty_region") {
      r.status = "empty";
      r.embedding = null;
      r.tokenCounts = {};
    } else {
      r.status = "ok";
      r.embedding = body.embeddings[0] ?? null;
      r.tokenCounts = body.token_counts[0] ?? {};
    }
    r.similar = [];
    r.predictions = {};
    this.notify();
  }

  /** Move a vertex and re-submit; the previous response is replaced. */
  async moveVertex(id: number, index: number, to: Vertex): Promise<void> {
    const r = this.regions.get(id);
    if (!r || index < 0 || index >= r.vertices.length) return;
    r.vertices[index] = [to[0], to[1]];
    await this.submit(id);
  }

  async fetchSimilar(id: number, k: number): Promise<void> {
    const r = this.regions.get(id);
    if (!r || r.status !== "ok") return;
    if (k <= 0) {
      r.similar = [];
      this.notify();
      return;
    }
    const body = await this.api.similar(this.boundaryOf(id), k);
    r.similar = body.similar;
    r.lastResponses["similar"] = body;
    this.notify();
  }

  async fetchPrediction(id: number, task: string): Promise<void> {
    const r = this.regions.get(id);
    if (!r || r.status !== "ok") return;
    const body = await this.api.predict(this.boundaryOf(id), task);
    r.predictions[task] = body;
    r.lastResponses[`predict:${task}`] = body;
    this.notify();
  }

  /** Cosine between two regions' server-returned embeddings. */
  compare(idA: number, idB: number): number {
    const a = this.regions.get(idA)?.embedding;
    const b = this.regions.get(idB)?.embedding;
    if (!a || !b) return NaN;
    return cosineSimilarity(a, b);
  }
}
