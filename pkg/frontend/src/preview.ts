// Paint the server-streamed semantic/depth preview PNGs onto canvases.

import type { Preview } from "./protocol";

export function drawPreview(
  semanticCanvas: HTMLCanvasElement,
  depthCanvas: HTMLCanvasElement,
  preview: Preview,
): void {
  paint(semanticCanvas, preview.semantic_png);
  paint(depthCanvas, preview.depth_png);
}

function paint(canvas: HTMLCanvasElement, pngB64: string): void {
  const img = new Image();
  img.onload = () => {
    const ctx = canvas.getContext("2d");
    if (!ctx) return;
    ctx.imageSmoothingEnabled = false;
    ctx.drawImage(img, 0, 0, canvas.width, canvas.height);
  };
  img.src = `data:image/png;base64,${pngB64}`;
}
