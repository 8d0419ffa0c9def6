import { describe, expect, it } from "vitest";
import { cameraBasis, projectToPixels } from "../src/camera";

// golden projections computed with the service's renderer (224 px, default
// camera distance 2.732, fov 30): the overlay must land on the same pixels
const VERTICES = new Float32Array([
  0.0, 0.0, 0.0,
  0.3, -0.2, 0.1,
  -0.25, 0.4, -0.35,
  0.5, 0.5, 0.5,
]);

const CASES = [
  {
    elevationDeg: 0, azimuthDeg: 0,
    pixels: [
      [112.0, 112.0], [159.643202, 143.762135],
      [78.094282, 57.750851], [205.635683, 18.364317],
    ],
    depth: [2.732, 2.632, 3.082, 2.232],
  },
  {
    elevationDeg: 20, azimuthDeg: 45,
    pixels: [
      [112.0, 112.0], [135.322114, 158.94663],
      [121.872285, 39.262734], [112.0, 61.749041],
    ],
    depth: [2.732, 2.534619, 2.99387, 1.896527],
  },
  {
    elevationDeg: -10, azimuthDeg: -120,
    pixels: [
      [112.0, 112.0], [103.173815, 146.910642],
      [81.184297, 32.08258], [133.909865, 67.249518],
    ],
    depth: [2.732, 3.002371, 2.415901, 3.49146],
  },
  {
    elevationDeg: 35, azimuthDeg: 180,
    pixels: [
      [112.0, 112.0], [69.182407, 127.196358],
      [159.158724, 88.060522], [38.791461, 10.040382],
    ],
    depth: [2.732, 2.92863, 2.215866, 2.854788],
  },
];

describe("projectToPixels", () => {
  it.each(CASES)(
    "matches the service renderer at elevation $elevationDeg azimuth $azimuthDeg",
    ({ elevationDeg, azimuthDeg, pixels, depth }) => {
      const proj = projectToPixels(VERTICES, elevationDeg, azimuthDeg, 224);
      for (let i = 0; i < 4; i++) {
        expect(proj.pixels[2 * i]).toBeCloseTo(pixels[i][0], 3);
        expect(proj.pixels[2 * i + 1]).toBeCloseTo(pixels[i][1], 3);
        expect(proj.depth[i]).toBeCloseTo(depth[i], 4);
      }
    },
  );

  it("projects the origin to the image center from any view", () => {
    const origin = new Float32Array([0, 0, 0]);
    for (const [e, a] of [[13, 77], [-42, -160], [89, 5]] as const) {
      const proj = projectToPixels(origin, e, a, 224);
      expect(proj.pixels[0]).toBeCloseTo(112, 6);
      expect(proj.pixels[1]).toBeCloseTo(112, 6);
      expect(proj.depth[0]).toBeCloseTo(2.732, 6);
    }
  });
});

describe("cameraBasis", () => {
  it("forms an orthonormal right-handed frame", () => {
    const { right, up, forward } = cameraBasis(25, -60);
    const dot = (a: typeof right, b: typeof right) => a.x * b.x + a.y * b.y + a.z * b.z;
    expect(dot(right, up)).toBeCloseTo(0, 9);
    expect(dot(right, forward)).toBeCloseTo(0, 9);
    expect(dot(up, forward)).toBeCloseTo(0, 9);
    expect(dot(right, right)).toBeCloseTo(1, 9);
    expect(dot(up, up)).toBeCloseTo(1, 9);
  });

  it("looks at the origin", () => {
    const { position, forward } = cameraBasis(30, 140);
    expect(position.x + 2.732 * forward.x).toBeCloseTo(0, 6);
    expect(position.y + 2.732 * forward.y).toBeCloseTo(0, 6);
    expect(position.z + 2.732 * forward.z).toBeCloseTo(0, 6);
  });

  it("handles the pole without a degenerate basis", () => {
    const { right, up } = cameraBasis(90, 0);
    expect(Math.hypot(right.x, right.y, right.z)).toBeCloseTo(1, 6);
    expect(Math.hypot(up.x, up.y, up.z)).toBeCloseTo(1, 6);
  });
});
