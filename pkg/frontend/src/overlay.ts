import { projectToPixels, NEAR } from "./camera";
import type { ParsedMesh } from "./types";

/**
 * 2D triangles (six floats each: x0,y0,x1,y1,x2,y2 in canvas pixels) of the
 * mesh as seen from a viewpoint. The union of the filled triangles is the
 * mesh silhouette under the same camera the service renders with, so the
 * overlay tells the user how the generated shape projects onto their strokes.
 * Faces with any vertex at or behind the near plane are dropped.
 */
export function overlayTriangles(
  mesh: ParsedMesh,
  elevationDeg: number,
  azimuthDeg: number,
  size: number,
): Float32Array {
  const { pixels, depth } = projectToPixels(mesh.positions, elevationDeg, azimuthDeg, size);
  const out = new Float32Array(mesh.faces.length * 2);
  let n = 0;
  for (let f = 0; f < mesh.faces.length; f += 3) {
    const a = mesh.faces[f];
    const b = mesh.faces[f + 1];
    const c = mesh.faces[f + 2];
    if (depth[a] <= NEAR || depth[b] <= NEAR || depth[c] <= NEAR) continue;
    out[n++] = pixels[2 * a];
    out[n++] = pixels[2 * a + 1];
    out[n++] = pixels[2 * b];
    out[n++] = pixels[2 * b + 1];
    out[n++] = pixels[2 * c];
    out[n++] = pixels[2 * c + 1];
  }
  return out.subarray(0, n);
}

export function paintOverlay(
  ctx: CanvasRenderingContext2D,
  triangles: Float32Array,
  color: string = "rgba(70, 130, 220, 0.35)",
): void {
  ctx.save();
  ctx.fillStyle = color;
  ctx.beginPath();
  for (let i = 0; i < triangles.length; i += 6) {
    ctx.moveTo(triangles[i], triangles[i + 1]);
    ctx.lineTo(triangles[i + 2], triangles[i + 3]);
    ctx.lineTo(triangles[i + 4], triangles[i + 5]);
    ctx.closePath();
  }
  ctx.fill();
  ctx.restore();
}
