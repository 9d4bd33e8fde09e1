// Canvas rendering: token dots colored by type, drawn regions filled by
// status, similar-region overlays as dashed outlines.

import { GeoPolygon, TokenPoint } from "./api.js";
import { Vertex } from "./geometry.js";
import { DrawnRegion } from "./state.js";
import { Viewport } from "./view.js";

const TYPE_COLORS = [
  "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1",
  "#76b7b2", "#edc948", "#ff9da7", "#9c755f", "#bab0ac",
];

export function typeColor(typeNames: string[], name: string): string {
  const i = Math.max(0, typeNames.indexOf(name));
  return TYPE_COLORS[i % TYPE_COLORS.length]!;
}

const STATUS_STYLE: Record<string, { stroke: string; fill: string }> = {
  draft: { stroke: "#888888", fill: "rgba(136,136,136,0.10)" },
  pending: { stroke: "#c9a227", fill: "rgba(201,162,39,0.12)" },
  ok: { stroke: "#2b7de9", fill: "rgba(43,125,233,0.12)" },
  empty: { stroke: "#d0342c", fill: "rgba(208,52,44,0.15)" },
  error: { stroke: "#d0342c", fill: "rgba(208,52,44,0.25)" },
};

function tracePath(ctx: CanvasRenderingContext2D, view: Viewport, vertices: Vertex[], close: boolean) {
  ctx.beginPath();
  vertices.forEach((v, i) => {
    const [sx, sy] = view.toScreen(v);
    if (i === 0) ctx.moveTo(sx, sy);
    else ctx.lineTo(sx, sy);
  });
  if (close) ctx.closePath();
}

export function drawTokens(
  ctx: CanvasRenderingContext2D,
  view: Viewport,
  tokens: TokenPoint[],
  typeNames: string[],
) {
  for (const t of tokens) {
    const [sx, sy] = view.toScreen([t.x, t.y]);
    ctx.fillStyle = typeColor(typeNames, t.type);
    ctx.fillRect(sx - 1.25, sy - 1.25, 2.5, 2.5);
  }
}

export function drawRegion(
  ctx: CanvasRenderingContext2D,
  view: Viewport,
  region: DrawnRegion,
  selected: boolean,
) {
  if (region.vertices.length === 0) return;
  const style = STATUS_STYLE[region.status] ?? STATUS_STYLE["draft"]!;
  tracePath(ctx, view, region.vertices, region.vertices.length >= 3);
  ctx.fillStyle = style.fill;
  ctx.fill();
  ctx.lineWidth = selected ? 2.5 : 1.5;
  ctx.strokeStyle = style.stroke;
  ctx.stroke();
  for (const v of region.vertices) {
    const [sx, sy] = view.toScreen(v);
    ctx.fillStyle = style.stroke;
    ctx.beginPath();
    ctx.arc(sx, sy, selected ? 4 : 3, 0, Math.PI * 2);
    ctx.fill();
  }
  const [lx, ly] = view.toScreen(region.vertices[0]!);
  ctx.fillStyle = style.stroke;
  ctx.font = "12px sans-serif";
  const tag = region.status === "empty" ? `#${region.id} empty region` : `#${region.id}`;
  ctx.fillText(tag, lx + 6, ly - 6);
}

function polygonRings(geom: GeoPolygon): Vertex[][] {
  if (geom.type === "Polygon") {
    return (geom.coordinates as number[][][]).map((ring) => ring.map((p) => [p[0]!, p[1]!]));
  }
  const rings: Vertex[][] = [];
  for (const poly of geom.coordinates as number[][][][]) {
    for (const ring of poly) rings.push(ring.map((p) => [p[0]!, p[1]!]));
  }
  return rings;
}

export function drawSimilarOverlay(
  ctx: CanvasRenderingContext2D,
  view: Viewport,
  boundary: GeoPolygon,
  score: number,
  rank: number,
) {
  ctx.save();
  ctx.setLineDash([6, 4]);
  ctx.strokeStyle = "#7d3cbd";
  ctx.lineWidth = 1.5;
  let anchor: Vertex | null = null;
  for (const ring of polygonRings(boundary)) {
    tracePath(ctx, view, ring, true);
    ctx.stroke();
    anchor = anchor ?? ring[0] ?? null;
  }
  if (anchor) {
    const [sx, sy] = view.toScreen(anchor);
    ctx.fillStyle = "#7d3cbd";
    ctx.font = "11px sans-serif";
    ctx.fillText(`${rank}. ${score.toFixed(3)}`, sx + 4, sy + 12);
  }
  ctx.restore();
}

export function drawDraft(ctx: CanvasRenderingContext2D, view: Viewport,
                          vertices: Vertex[], cursor: Vertex | null) {
  if (vertices.length === 0) return;
  ctx.save();
  ctx.setLineDash([4, 3]);
  ctx.strokeStyle = "#555";
  const pts = cursor ? [...vertices, cursor] : vertices;
  tracePath(ctx, view, pts, false);
  ctx.stroke();
  ctx.restore();
  for (const v of vertices) {
    const [sx, sy] = view.toScreen(v);
    ctx.fillStyle = "#555";
    ctx.fillRect(sx - 2, sy - 2, 4, 4);
  }
}
