/**
 * The service's camera model, reproduced exactly so the silhouette overlay
 * lands on the same pixels the model was trained against: camera on a sphere
 * of fixed radius looking at the origin, world up +y, azimuth 0 on +z,
 * perspective projection with a 30 degree vertical field of view.
 */

export const CAMERA_DISTANCE = 2.732;
export const FOV_DEGREES = 30;
export const NEAR = 0.1;

export interface Vec3 {
  x: number;
  y: number;
  z: number;
}

export interface CameraBasis {
  position: Vec3;
  right: Vec3;
  up: Vec3;
  forward: Vec3;
}

const rad = (deg: number) => (deg * Math.PI) / 180;

function cross(a: Vec3, b: Vec3): Vec3 {
  return { x: a.y * b.z - a.z * b.y, y: a.z * b.x - a.x * b.z, z: a.x * b.y - a.y * b.x };
}

function normalize(v: Vec3): Vec3 {
  const n = Math.hypot(v.x, v.y, v.z);
  return { x: v.x / n, y: v.y / n, z: v.z / n };
}

export function cameraBasis(
  elevationDeg: number,
  azimuthDeg: number,
  distance: number = CAMERA_DISTANCE,
): CameraBasis {
  const e = rad(elevationDeg);
  const a = rad(azimuthDeg);
  const ce = Math.cos(e);
  const position = {
    x: distance * ce * Math.sin(a),
    y: distance * Math.sin(e),
    z: distance * ce * Math.cos(a),
  };
  const forward = normalize({ x: -position.x, y: -position.y, z: -position.z });
  let upWorld: Vec3 = { x: 0, y: 1, z: 0 };
  if (Math.abs(forward.y) > 1 - 1e-9) {
    upWorld = { x: 0, y: 0, z: -Math.sign(e) || -1 };
  }
  const right = normalize(cross(forward, upWorld));
  const up = cross(right, forward);
  return { position, right, up, forward };
}

export interface Projection {
  pixels: Float32Array; // x,y per vertex, y down, continuous pixel coords
  depth: Float32Array; // distance along the view direction
}

export function projectToPixels(
  positions: Float32Array,
  elevationDeg: number,
  azimuthDeg: number,
  size: number,
  distance: number = CAMERA_DISTANCE,
): Projection {
  const { position, right, up, forward } = cameraBasis(elevationDeg, azimuthDeg, distance);
  const focal = 1 / Math.tan(rad(FOV_DEGREES) / 2);
  const n = positions.length / 3;
  const pixels = new Float32Array(n * 2);
  const depth = new Float32Array(n);
  for (let i = 0; i < n; i++) {
    const dx = positions[3 * i] - position.x;
    const dy = positions[3 * i + 1] - position.y;
    const dz = positions[3 * i + 2] - position.z;
    const cx = right.x * dx + right.y * dy + right.z * dz;
    const cy = up.x * dx + up.y * dy + up.z * dz;
    const cz = forward.x * dx + forward.y * dy + forward.z * dz;
    depth[i] = cz;
    const safe = Math.max(cz, NEAR);
    const ndcX = (focal * cx) / safe;
    const ndcY = (focal * cy) / safe;
    pixels[2 * i] = (ndcX + 1) * 0.5 * size;
    pixels[2 * i + 1] = (1 - ndcY) * 0.5 * size;
  }
  return { pixels, depth };
}
