export interface Point {
  x: number;
  y: number;
}

export type Stroke = Point[];

/** Degrees on the wire and in the UI; the service converts internally. */
export interface ViewpointDeg {
  elevation_deg: number;
  azimuth_deg: number;
}

export interface InferenceRequest {
  sketch: string; // base64 PNG, single channel, dark strokes on white
  class: string;
  viewpoint: ViewpointDeg | null;
  resize?: boolean;
}

export interface InferenceResponse {
  mesh_obj: string;
  predicted_viewpoint: ViewpointDeg;
  model_hash: string;
  config_hash: string;
  timing_ms: number;
}

export interface ParsedMesh {
  positions: Float32Array; // xyz per vertex
  faces: Uint32Array; // 3 vertex indices per triangle
}
