import type { ParsedMesh } from "./types";

/**
 * Parse OBJ text into flat position/index buffers. Handles `v x y z` and
 * `f` lines with `v`, `v/vt`, `v//vn`, `v/vt/vn` references; polygons are
 * fan-triangulated. Normals/texcoords/materials are ignored.
 */
export function parseObj(text: string): ParsedMesh {
  const positions: number[] = [];
  const faces: number[] = [];
  const lines = text.split("\n");
  for (let ln = 0; ln < lines.length; ln++) {
    const line = lines[ln].trim();
    if (line === "" || line.startsWith("#")) continue;
    const parts = line.split(/\s+/);
    if (parts[0] === "v") {
      if (parts.length < 4) throw new Error(`line ${ln + 1}: vertex needs 3 coordinates`);
      positions.push(Number(parts[1]), Number(parts[2]), Number(parts[3]));
    } else if (parts[0] === "f") {
      if (parts.length < 4) throw new Error(`line ${ln + 1}: face needs 3 vertices`);
      const idx = parts.slice(1).map((p) => {
        const v = Number(p.split("/")[0]);
        if (!Number.isInteger(v) || v === 0) throw new Error(`line ${ln + 1}: bad face index '${p}'`);
        return v > 0 ? v - 1 : positions.length / 3 + v;
      });
      for (let k = 1; k + 1 < idx.length; k++) {
        faces.push(idx[0], idx[k], idx[k + 1]);
      }
    }
  }
  const nVerts = positions.length / 3;
  for (const f of faces) {
    if (f < 0 || f >= nVerts) throw new Error(`face index ${f + 1} out of range (${nVerts} vertices)`);
  }
  if (positions.some((x) => !Number.isFinite(x))) throw new Error("non-finite vertex coordinate");
  return { positions: new Float32Array(positions), faces: new Uint32Array(faces) };
}
