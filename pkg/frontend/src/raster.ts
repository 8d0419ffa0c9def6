import type { Stroke } from "./types";

export const SKETCH_SIZE = 224;
export const LINE_WIDTH = 2;

/**
 * Rasterize a stroke list to a binary sketch image: dark strokes on white.
 * Coverage per pixel center is a 1 px linear ramp on the distance to the
 * nearest stroke segment (anti-aliasing), then thresholded at 0.5, so the
 * output depends only on the stroke geometry, never on a browser's canvas
 * implementation. Returns row-major bytes, 0 = ink, 255 = paper.
 */
export function rasterizeStrokes(
  strokes: Stroke[],
  size: number = SKETCH_SIZE,
  lineWidth: number = LINE_WIDTH,
): Uint8Array {
  const coverage = new Float32Array(size * size);
  const half = lineWidth / 2;
  const pad = half + 1.5; // AA ramp support around each segment

  for (const stroke of strokes) {
    if (stroke.length === 0) continue;
    const segs = stroke.length === 1 ? 1 : stroke.length - 1;
    for (let s = 0; s < segs; s++) {
      const a = stroke[s];
      const b = stroke.length === 1 ? a : stroke[s + 1];
      const x0 = Math.max(0, Math.floor(Math.min(a.x, b.x) - pad));
      const x1 = Math.min(size - 1, Math.ceil(Math.max(a.x, b.x) + pad));
      const y0 = Math.max(0, Math.floor(Math.min(a.y, b.y) - pad));
      const y1 = Math.min(size - 1, Math.ceil(Math.max(a.y, b.y) + pad));
      const dx = b.x - a.x;
      const dy = b.y - a.y;
      const len2 = dx * dx + dy * dy;
      for (let py = y0; py <= y1; py++) {
        for (let px = x0; px <= x1; px++) {
          const cx = px + 0.5;
          const cy = py + 0.5;
          let t = 0;
          if (len2 > 0) {
            t = ((cx - a.x) * dx + (cy - a.y) * dy) / len2;
            t = Math.max(0, Math.min(1, t));
          }
          const qx = a.x + t * dx - cx;
          const qy = a.y + t * dy - cy;
          const d = Math.sqrt(qx * qx + qy * qy);
          const c = Math.max(0, Math.min(1, 0.5 + (half - d)));
          const i = py * size + px;
          if (c > coverage[i]) coverage[i] = c;
        }
      }
    }
  }

  const out = new Uint8Array(size * size);
  for (let i = 0; i < out.length; i++) {
    out[i] = coverage[i] >= 0.5 ? 0 : 255;
  }
  return out;
}

/** Scale strokes from display-canvas coordinates into sketch pixels. */
export function scaleStrokes(strokes: Stroke[], from: number, to: number): Stroke[] {
  const k = to / from;
  return strokes.map((s) => s.map((p) => ({ x: p.x * k, y: p.y * k })));
}
