import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import { CAMERA_DISTANCE, FOV_DEGREES, cameraBasis } from "./camera";
import type { MeshViewer, ViewDeg } from "./app";
import type { ParsedMesh } from "./types";

/**
 * Orbitable mesh viewer. The orbit camera is deliberately independent of the
 * generation viewpoint — the user inspects the shape from anywhere — and
 * snapTo() reproduces the exact generation camera (same fov, distance and
 * look-at as the service's renderer).
 */
export class ThreeMeshViewer implements MeshViewer {
  private readonly scene = new THREE.Scene();
  private readonly camera: THREE.PerspectiveCamera;
  private readonly renderer: THREE.WebGLRenderer;
  private readonly controls: OrbitControls;
  private mesh: THREE.Mesh | null = null;

  constructor(mount: HTMLElement, size: number = 448) {
    this.camera = new THREE.PerspectiveCamera(FOV_DEGREES, 1, 0.05, 50);
    this.renderer = new THREE.WebGLRenderer({ antialias: true });
    this.renderer.setSize(size, size);
    this.renderer.setClearColor(0xf4f4f2);
    mount.appendChild(this.renderer.domElement);

    this.scene.add(new THREE.AmbientLight(0xffffff, 0.55));
    const key = new THREE.DirectionalLight(0xffffff, 1.0);
    key.position.set(3, 5, 4);
    this.scene.add(key);
    const fill = new THREE.DirectionalLight(0xffffff, 0.4);
    fill.position.set(-4, -2, -3);
    this.scene.add(fill);
    this.scene.add(new THREE.AxesHelper(0.6));

    this.controls = new OrbitControls(this.camera, this.renderer.domElement);
    this.controls.enableDamping = true;
    this.controls.target.set(0, 0, 0);
    this.snapTo({ elevationDeg: 15, azimuthDeg: 30 });

    const animate = () => {
      requestAnimationFrame(animate);
      this.controls.update();
      this.renderer.render(this.scene, this.camera);
    };
    animate();
  }

  setMesh(parsed: ParsedMesh): void {
    if (this.mesh !== null) {
      this.scene.remove(this.mesh);
      this.mesh.geometry.dispose();
      (this.mesh.material as THREE.Material).dispose();
    }
    const geometry = new THREE.BufferGeometry();
    geometry.setAttribute("position", new THREE.BufferAttribute(parsed.positions, 3));
    geometry.setIndex(new THREE.BufferAttribute(parsed.faces, 1));
    geometry.computeVertexNormals();
    const material = new THREE.MeshStandardMaterial({
      color: 0x7aa2cc,
      roughness: 0.65,
      metalness: 0.05,
      side: THREE.DoubleSide,
      flatShading: true,
    });
    this.mesh = new THREE.Mesh(geometry, material);
    this.scene.add(this.mesh);
  }

  snapTo(view: ViewDeg): void {
    const { position } = cameraBasis(view.elevationDeg, view.azimuthDeg, CAMERA_DISTANCE);
    this.camera.position.set(position.x, position.y, position.z);
    this.camera.up.set(0, 1, 0);
    this.controls.target.set(0, 0, 0);
    this.camera.lookAt(0, 0, 0);
    this.controls.update();
  }
}
