// Small client-side geometry/vector helpers. Polygon vertices are sent to
// the server exactly as drawn; the only ring manipulation here is appending
// the closing vertex GeoJSON requires.

export type Vertex = [number, number];

export function closedRing(vertices: Vertex[]): Vertex[] {
  if (vertices.length === 0) return [];
  const first = vertices[0]!;
  return [...vertices.map((v) => [v[0], v[1]] as Vertex), [first[0], first[1]]];
}

export function toPolygon(vertices: Vertex[]) {
  return { type: "Polygon", coordinates: [closedRing(vertices)] };
}

export function bboxOf(vertices: Vertex[]): [number, number, number, number] {
  let x0 = Infinity,
    y0 = Infinity,
    x1 = -Infinity,
    y1 = -Infinity;
  for (const [x, y] of vertices) {
    x0 = Math.min(x0, x);
    y0 = Math.min(y0, y);
    x1 = Math.max(x1, x);
    y1 = Math.max(y1, y);
  }
  return [x0, y0, x1, y1];
}

export function centroidOf(vertices: Vertex[]): Vertex {
  let sx = 0,
    sy = 0;
  for (const [x, y] of vertices) {
    sx += x;
    sy += y;
  }
  return [sx / vertices.length, sy / vertices.length];
}

export function cosineSimilarity(a: number[], b: number[]): number {
  if (a.length !== b.length || a.length === 0) return NaN;
  let dot = 0,
    na = 0,
    nb = 0;
  for (let i = 0; i < a.length; i++) {
    dot += a[i]! * b[i]!;
    na += a[i]! * a[i]!;
    nb += b[i]! * b[i]!;
  }
  const denom = Math.sqrt(na) * Math.sqrt(nb);
  return denom > 0 ? dot / denom : NaN;
}

export function distance(a: Vertex, b: Vertex): number {
  return Math.hypot(a[0] - b[0], a[1] - b[1]);
}

/** Index of the vertex within `radius` of p, or -1. */
export function hitVertex(vertices: Vertex[], p: Vertex, radius: number): number {
  for (let i = 0; i < vertices.length; i++) {
    if (distance(vertices[i]!, p) <= radius) return i;
  }
  return -1;
}
