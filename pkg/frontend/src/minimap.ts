// Top-down minimap: chunk layout squares, the driven trail, and the current
// pose arrow. World (x, y) maps to canvas pixels with y flipped.

import type { Pose, WorldInfo } from "./protocol";

export type MapTransform = { scale: number; offsetX: number; offsetY: number; height: number };

export function worldBounds(world: WorldInfo): { min: [number, number]; max: [number, number] } {
  const e = world.chunk_extent_m;
  const [ox, oy] = world.base_origin;
  let minX = Infinity;
  let minY = Infinity;
  let maxX = -Infinity;
  let maxY = -Infinity;
  for (const [i, j] of world.chunks) {
    const x0 = ox + i * world.stride_m;
    const y0 = oy + j * world.stride_m;
    minX = Math.min(minX, x0);
    minY = Math.min(minY, y0);
    maxX = Math.max(maxX, x0 + e);
    maxY = Math.max(maxY, y0 + e);
  }
  return { min: [minX, minY], max: [maxX, maxY] };
}

export function fitTransform(world: WorldInfo, width: number, height: number, pad = 10): MapTransform {
  const { min, max } = worldBounds(world);
  const spanX = Math.max(max[0] - min[0], 1e-9);
  const spanY = Math.max(max[1] - min[1], 1e-9);
  const scale = Math.min((width - 2 * pad) / spanX, (height - 2 * pad) / spanY);
  return {
    scale,
    offsetX: pad - min[0] * scale + (width - 2 * pad - spanX * scale) / 2,
    offsetY: pad - min[1] * scale + (height - 2 * pad - spanY * scale) / 2,
    height,
  };
}

export function worldToCanvas(t: MapTransform, x: number, y: number): [number, number] {
  return [x * t.scale + t.offsetX, t.height - (y * t.scale + t.offsetY)];
}

export function drawMinimap(
  ctx: CanvasRenderingContext2D,
  world: WorldInfo,
  trail: [number, number][],
  pose: Pose | null,
): void {
  const { width, height } = ctx.canvas;
  ctx.fillStyle = "#10141c";
  ctx.fillRect(0, 0, width, height);
  const t = fitTransform(world, width, height);
  const e = world.chunk_extent_m * t.scale;

  ctx.strokeStyle = "#3c4c64";
  ctx.fillStyle = "#1c2433";
  for (const [i, j] of world.chunks) {
    const [cx, cy] = worldToCanvas(
      t,
      world.base_origin[0] + i * world.stride_m,
      world.base_origin[1] + j * world.stride_m + world.chunk_extent_m,
    );
    ctx.fillRect(cx, cy, e, e);
    ctx.strokeRect(cx, cy, e, e);
  }

  if (trail.length > 1) {
    ctx.strokeStyle = "#58c470";
    ctx.beginPath();
    trail.forEach(([x, y], n) => {
      const [px, py] = worldToCanvas(t, x, y);
      n === 0 ? ctx.moveTo(px, py) : ctx.lineTo(px, py);
    });
    ctx.stroke();
  }

  if (pose) {
    const [px, py] = worldToCanvas(t, pose.position[0], pose.position[1]);
    const h = pose.heading;
    ctx.fillStyle = "#ffd75e";
    ctx.beginPath();
    ctx.moveTo(px + 7 * Math.cos(h) * 1.2, py - 7 * Math.sin(h) * 1.2);
    ctx.lineTo(px + 5 * Math.cos(h + 2.5), py - 5 * Math.sin(h + 2.5));
    ctx.lineTo(px + 5 * Math.cos(h - 2.5), py - 5 * Math.sin(h - 2.5));
    ctx.closePath();
    ctx.fill();
  }
}
