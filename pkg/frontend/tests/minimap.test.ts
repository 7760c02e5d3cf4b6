import { describe, expect, it } from "vitest";
import type { WorldInfo } from "../src/protocol";
import { fitTransform, worldBounds, worldToCanvas } from "../src/minimap";

const world: WorldInfo = {
  chunks: [
    [0, 0],
    [1, 0],
    [0, 1],
  ],
  stride_m: 25.6,
  chunk_extent_m: 51.2,
  base_origin: [-25.6, -25.6, -25.6],
  ego: { position: [0, 0, 1.6], heading: 0 },
};

describe("minimap transform", () => {
  it("bounds cover all placed chunks", () => {
    const { min, max } = worldBounds(world);
    expect(min).toEqual([-25.6, -25.6]);
    expect(max).toEqual([-25.6 + 25.6 + 51.2, -25.6 + 25.6 + 51.2]);
  });

  it("fits the world inside the canvas with padding", () => {
    const t = fitTransform(world, 360, 360, 10);
    const { min, max } = worldBounds(world);
    for (const [x, y] of [min, max, [min[0], max[1]], [max[0], min[1]]] as [number, number][]) {
      const [px, py] = worldToCanvas(t, x, y);
      expect(px).toBeGreaterThanOrEqual(10 - 1e-9);
      expect(px).toBeLessThanOrEqual(350 + 1e-9);
      expect(py).toBeGreaterThanOrEqual(10 - 1e-9);
      expect(py).toBeLessThanOrEqual(350 + 1e-9);
    }
  });

  it("flips y so north is up", () => {
    const t = fitTransform(world, 360, 360, 10);
    const [, lowY] = worldToCanvas(t, 0, -20);
    const [, highY] = worldToCanvas(t, 0, 40);
    expect(highY).toBeLessThan(lowY);
  });

  it("preserves aspect ratio", () => {
    const t = fitTransform(world, 720, 360, 10);
    const [x0] = worldToCanvas(t, 0, 0);
    const [x1] = worldToCanvas(t, 10, 0);
    const [, y0] = worldToCanvas(t, 0, 0);
    const [, y1] = worldToCanvas(t, 0, 10);
    expect(Math.abs(x1 - x0)).toBeCloseTo(Math.abs(y0 - y1), 9);
  });
});
