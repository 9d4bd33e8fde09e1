// Planar world<->screen transform for the pan/zoom canvas. The map view is
// a plain coordinate plane over the city bbox, not a tiled world map.

import { Vertex } from "./geometry.js";

export class Viewport {
  scale = 1;
  offsetX = 0;
  offsetY = 0;

  constructor(
    public width: number,
    public height: number,
  ) {}

  fitBounds(x0: number, y0: number, x1: number, y1: number, margin = 0.05) {
    const w = Math.max(x1 - x0, 1e-9);
    const h = Math.max(y1 - y0, 1e-9);
    this.scale = Math.min(this.width / (w * (1 + 2 * margin)), this.height / (h * (1 + 2 * margin)));
    const cx = (x0 + x1) / 2;
    const cy = (y0 + y1) / 2;
    this.offsetX = this.width / 2 - cx * this.scale;
    this.offsetY = this.height / 2 + cy * this.scale;
  }

  // world y grows upward, screen y grows downward
  toScreen([x, y]: Vertex): Vertex {
    return [x * this.scale + this.offsetX, this.offsetY - y * this.scale];
  }

  toWorld([sx, sy]: Vertex): Vertex {
    return [(sx - this.offsetX) / this.scale, (this.offsetY - sy) / this.scale];
  }

  pan(dxScreen: number, dyScreen: number) {
    this.offsetX += dxScreen;
    this.offsetY += dyScreen;
  }

  zoomAt(sx: number, sy: number, factor: number) {
    const before = this.toWorld([sx, sy]);
    this.scale *= factor;
    const after = this.toScreen(before);
    this.offsetX += sx - after[0];
    this.offsetY += sy - after[1];
  }

  visibleWorldBbox(): [number, number, number, number] {
    const [x0, y1] = this.toWorld([0, 0]);
    const [x1, y0] = this.toWorld([this.width, this.height]);
    return [x0, y0, x1, y1];
  }
}
