import { type ServiceClient, ServiceError } from "./client";
import { overlayTriangles, paintOverlay } from "./overlay";
import { parseObj } from "./obj";
import { bytesToBase64, encodeGrayPng } from "./png";
import { LINE_WIDTH, SKETCH_SIZE, rasterizeStrokes, scaleStrokes } from "./raster";
import { RegenScheduler, type Timers } from "./scheduler";
import type { InferenceResponse, ParsedMesh, Point, Stroke } from "./types";

export interface ViewDeg {
  elevationDeg: number;
  azimuthDeg: number;
}

/** What the app needs from a 3D viewer; the three.js one lives in viewer.ts. */
export interface MeshViewer {
  setMesh(mesh: ParsedMesh): void;
  snapTo(view: ViewDeg): void;
}

export interface AppDeps {
  client: Pick<ServiceClient, "infer">;
  /** viewer instance, or factory receiving the mount element once it exists */
  viewer: MeshViewer | ((mount: HTMLElement) => MeshViewer);
  classes: string[];
  displaySize?: number;
  debounceMs?: number;
  timers?: Timers;
}

export interface AppElements {
  canvas: HTMLCanvasElement;
  clearButton: HTMLButtonElement;
  submitButton: HTMLButtonElement;
  autoButton: HTMLButtonElement;
  snapButton: HTMLButtonElement;
  classSelect: HTMLSelectElement;
  elevationSlider: HTMLInputElement;
  azimuthSlider: HTMLInputElement;
  overlayToggle: HTMLInputElement;
  predictedView: HTMLElement;
  errorBanner: HTMLElement;
  viewerMount: HTMLElement;
}

export interface App {
  elements: AppElements;
  addStroke(points: Point[]): void;
  clear(): void;
  submit(): void;
  whenIdle(): Promise<void>;
  readonly mode: "auto" | "steered";
  readonly strokes: readonly Stroke[];
  readonly lastResponse: InferenceResponse | null;
  readonly generationView: ViewDeg | null;
  readonly lastOverlay: Float32Array | null;
  readonly inferCount: number;
}

function el<K extends keyof HTMLElementTagNameMap>(
  doc: Document,
  tag: K,
  attrs: Record<string, string> = {},
  text?: string,
): HTMLElementTagNameMap[K] {
  const node = doc.createElement(tag);
  for (const [k, v] of Object.entries(attrs)) node.setAttribute(k, v);
  if (text !== undefined) node.textContent = text;
  return node;
}

export function createApp(root: HTMLElement, deps: AppDeps): App {
  const doc = root.ownerDocument;
  const displaySize = deps.displaySize ?? 448;

  const canvas = el(doc, "canvas", { class: "sketch-canvas" });
  canvas.width = displaySize;
  canvas.height = displaySize;
  const clearButton = el(doc, "button", {}, "Clear");
  const submitButton = el(doc, "button", { class: "primary" }, "Generate");
  const autoButton = el(doc, "button", {}, "Auto view");
  const snapButton = el(doc, "button", {}, "Snap camera to generation view");
  const classSelect = el(doc, "select");
  for (const c of deps.classes) {
    classSelect.appendChild(el(doc, "option", { value: c }, c));
  }
  const elevationSlider = el(doc, "input", {
    type: "range", min: "-90", max: "90", step: "1", value: "0",
  });
  const azimuthSlider = el(doc, "input", {
    type: "range", min: "-180", max: "180", step: "1", value: "0",
  });
  const elevationValue = el(doc, "span", {}, "0°");
  const azimuthValue = el(doc, "span", {}, "0°");
  const overlayToggle = el(doc, "input", { type: "checkbox", checked: "" });
  overlayToggle.checked = true;
  const predictedView = el(doc, "div", { class: "predicted-view" }, "predicted view: —");
  const errorBanner = el(doc, "div", { class: "error-banner", hidden: "" });
  const viewerMount = el(doc, "div", { class: "viewer-mount" });

  const drawPane = el(doc, "div", { class: "pane" });
  drawPane.append(
    el(doc, "h2", {}, "Sketch"),
    canvas,
    row(doc, clearButton, label(doc, "overlay", overlayToggle), submitButton),
    row(doc, label(doc, "class", classSelect)),
    row(doc, label(doc, "elevation", elevationSlider), elevationValue),
    row(doc, label(doc, "azimuth", azimuthSlider), azimuthValue),
    row(doc, autoButton),
    predictedView,
    errorBanner,
  );
  const viewPane = el(doc, "div", { class: "pane" });
  viewPane.append(el(doc, "h2", {}, "Mesh"), viewerMount, row(doc, snapButton));
  root.append(drawPane, viewPane);

  function row(d: Document, ...children: (HTMLElement | string)[]): HTMLElement {
    const r = el(d, "div", { class: "row" });
    r.append(...children);
    return r;
  }
  function label(d: Document, text: string, input: HTMLElement): HTMLElement {
    const l = el(d, "label", {}, text + " ");
    l.appendChild(input);
    return l;
  }

  const viewer = typeof deps.viewer === "function" ? deps.viewer(viewerMount) : deps.viewer;

  // happy to run without 2D support (headless tests): state still updates,
  // painting is skipped
  const ctx = canvas.getContext("2d");

  const strokes: Stroke[] = [];
  let mode: "auto" | "steered" = "auto";
  let mesh: ParsedMesh | null = null;
  let lastResponse: InferenceResponse | null = null;
  let generationView: ViewDeg | null = null;
  let lastOverlay: Float32Array | null = null;
  let inferCount = 0;

  function sliderView(): ViewDeg {
    return {
      elevationDeg: Number(elevationSlider.value),
      azimuthDeg: Number(azimuthSlider.value),
    };
  }

  function updateControls(): void {
    submitButton.disabled = strokes.length === 0 || deps.classes.length === 0;
    autoButton.disabled = submitButton.disabled;
    snapButton.disabled = generationView === null;
    elevationValue.textContent = `${elevationSlider.value}°`;
    azimuthValue.textContent = `${azimuthSlider.value}°`;
  }

  function redraw(): void {
    if (mesh !== null && generationView !== null && overlayToggle.checked) {
      lastOverlay = overlayTriangles(
        mesh, generationView.elevationDeg, generationView.azimuthDeg, displaySize,
      );
    } else {
      lastOverlay = null;
    }
    if (!ctx) return;
    ctx.fillStyle = "#ffffff";
    ctx.fillRect(0, 0, displaySize, displaySize);
    ctx.strokeStyle = "#1a1a1a";
    ctx.lineWidth = (LINE_WIDTH * displaySize) / SKETCH_SIZE;
    ctx.lineCap = "round";
    ctx.lineJoin = "round";
    for (const stroke of strokes) {
      if (stroke.length === 0) continue;
      ctx.beginPath();
      ctx.moveTo(stroke[0].x, stroke[0].y);
      for (let i = 1; i < stroke.length; i++) ctx.lineTo(stroke[i].x, stroke[i].y);
      if (stroke.length === 1) ctx.lineTo(stroke[0].x + 0.01, stroke[0].y);
      ctx.stroke();
    }
    if (lastOverlay !== null) paintOverlay(ctx, lastOverlay);
  }

  function showError(message: string | null): void {
    if (message === null) {
      errorBanner.hidden = true;
      errorBanner.textContent = "";
    } else {
      errorBanner.hidden = false;
      errorBanner.textContent = message;
    }
  }

  async function doSubmit(): Promise<void> {
    if (strokes.length === 0) return;
    const steered = mode === "steered" ? sliderView() : null;
    const pixels = rasterizeStrokes(scaleStrokes(strokes, displaySize, SKETCH_SIZE));
    const sketch = bytesToBase64(encodeGrayPng(SKETCH_SIZE, SKETCH_SIZE, pixels));
    try {
      const response = await deps.client.infer({
        sketch,
        class: classSelect.value,
        viewpoint: steered
          ? { elevation_deg: steered.elevationDeg, azimuth_deg: steered.azimuthDeg }
          : null,
      });
      inferCount += 1;
      lastResponse = response;
      mesh = parseObj(response.mesh_obj);
      generationView = steered ?? {
        elevationDeg: response.predicted_viewpoint.elevation_deg,
        azimuthDeg: response.predicted_viewpoint.azimuth_deg,
      };
      viewer.setMesh(mesh);
      const pv = response.predicted_viewpoint;
      predictedView.textContent =
        `predicted view: elevation ${pv.elevation_deg.toFixed(1)}°, ` +
        `azimuth ${pv.azimuth_deg.toFixed(1)}°`;
      if (steered === null) {
        elevationSlider.value = String(Math.round(pv.elevation_deg));
        azimuthSlider.value = String(Math.round(pv.azimuth_deg));
      }
      showError(null);
    } catch (err) {
      if (err instanceof ServiceError) {
        showError(
          err.kind === "network"
            ? "service unreachable — is the inference server running?"
            : `request failed: ${err.message}`,
        );
      } else {
        showError(`unexpected error: ${(err as Error).message}`);
      }
    }
    updateControls();
    redraw();
  }

  const scheduler = new RegenScheduler(doSubmit, deps.debounceMs ?? 300, deps.timers);

  function onSliderInput(): void {
    mode = "steered";
    updateControls();
    if (strokes.length > 0) scheduler.request();
  }
  elevationSlider.addEventListener("input", onSliderInput);
  azimuthSlider.addEventListener("input", onSliderInput);

  submitButton.addEventListener("click", () => scheduler.requestImmediate());
  autoButton.addEventListener("click", () => {
    mode = "auto";
    scheduler.requestImmediate();
  });
  snapButton.addEventListener("click", () => {
    if (generationView !== null) viewer.snapTo(generationView);
  });
  overlayToggle.addEventListener("change", redraw);
  clearButton.addEventListener("click", () => {
    strokes.length = 0;
    updateControls();
    redraw();
  });

  // stroke capture; tests can call addStroke directly instead
  let active: Stroke | null = null;
  function canvasPoint(ev: MouseEvent): Point {
    const rect = canvas.getBoundingClientRect();
    const scale = rect.width > 0 ? displaySize / rect.width : 1;
    return { x: (ev.clientX - rect.left) * scale, y: (ev.clientY - rect.top) * scale };
  }
  canvas.addEventListener("pointerdown", (ev) => {
    active = [canvasPoint(ev)];
    strokes.push(active);
    canvas.setPointerCapture?.(ev.pointerId);
    updateControls();
    redraw();
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!active) return;
    active.push(canvasPoint(ev));
    redraw();
  });
  const endStroke = () => {
    active = null;
  };
  canvas.addEventListener("pointerup", endStroke);
  canvas.addEventListener("pointercancel", endStroke);

  updateControls();
  redraw();

  return {
    elements: {
      canvas, clearButton, submitButton, autoButton, snapButton, classSelect,
      elevationSlider, azimuthSlider, overlayToggle, predictedView, errorBanner,
      viewerMount,
    },
    addStroke(points: Point[]): void {
      strokes.push(points.slice());
      updateControls();
      redraw();
    },
    clear(): void {
      strokes.length = 0;
      updateControls();
      redraw();
    },
    submit(): void {
      scheduler.requestImmediate();
    },
    whenIdle: () => scheduler.whenIdle(),
    get mode() {
      return mode;
    },
    get strokes() {
      return strokes;
    },
    get lastResponse() {
      return lastResponse;
    },
    get generationView() {
      return generationView;
    },
    get lastOverlay() {
      return lastOverlay;
    },
    get inferCount() {
      return inferCount;
    },
  };
}
