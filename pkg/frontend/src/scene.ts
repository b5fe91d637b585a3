/** Three.js viewport: bone-capsule skeletons over a ground grid, plus the
 * editable path polyline. The live character is cyan and updates only
 * from streamed frames; the target keyframe is green, the start gray. */

import * as THREE from "three";
import { OrbitControls } from "three/examples/jsm/controls/OrbitControls.js";
import type { PathSpec, PoseResponse, StreamFrame } from "./types";

export const COLORS = {
  start: 0x888888,
  target: 0x33cc66, // the goal pose is always the green one
  live: 0x33cccc,
  path: 0xffaa33,
  controlPoint: 0xff5533,
} as const;

const BONE_RADIUS = 0.025;

/** A renderable skeleton: one capsule-ish segment per parent-child pair,
 * one sphere per joint, positioned straight from world-space joint
 * positions (no FK on the client). */
class SkeletonActor {
  readonly group = new THREE.Group();
  private joints: THREE.Mesh[] = [];
  private segments: THREE.Mesh[] = [];
  private material: THREE.MeshLambertMaterial;

  constructor(boneCount: number, color: number) {
    this.material = new THREE.MeshLambertMaterial({ color });
    const jointGeo = new THREE.SphereGeometry(BONE_RADIUS * 1.4, 8, 8);
    for (let i = 0; i < boneCount; i++) {
      const joint = new THREE.Mesh(jointGeo, this.material);
      this.joints.push(joint);
      this.group.add(joint);
      const seg = new THREE.Mesh(
        new THREE.CylinderGeometry(BONE_RADIUS, BONE_RADIUS, 1, 6),
        this.material,
      );
      seg.visible = false;
      this.segments.push(seg);
      this.group.add(seg);
    }
  }

  /** positions: (bones, 3); parents: index of each bone's parent (-1 root). */
  setPose(positions: number[][], parents: number[]): void {
    const up = new THREE.Vector3(0, 1, 0);
    for (let i = 0; i < this.joints.length; i++) {
      const p = positions[i];
      this.joints[i].position.set(p[0], p[1], p[2]);
      const parent = parents[i];
      const seg = this.segments[i];
      if (parent < 0) {
        seg.visible = false;
        continue;
      }
      const a = new THREE.Vector3(...positions[parent]);
      const b = new THREE.Vector3(...positions[i]);
      const len = a.distanceTo(b);
      if (len < 1e-6) {
        seg.visible = false;
        continue;
      }
      seg.visible = true;
      seg.scale.set(1, len, 1);
      seg.position.copy(a).lerp(b, 0.5);
      seg.quaternion.setFromUnitVectors(up, b.clone().sub(a).normalize());
    }
  }

  set visible(v: boolean) {
    this.group.visible = v;
  }
}

export class Viewport {
  private renderer: THREE.WebGLRenderer;
  private scene = new THREE.Scene();
  private camera: THREE.PerspectiveCamera;
  private controls: OrbitControls;
  private start: SkeletonActor;
  private target: SkeletonActor;
  private live: SkeletonActor;
  private pathLine: THREE.Line | null = null;
  private controlPointMeshes: THREE.Mesh[] = [];
  private parents: number[];

  constructor(canvas: HTMLCanvasElement, boneCount: number, parents: number[]) {
    this.parents = parents;
    this.renderer = new THREE.WebGLRenderer({ canvas, antialias: true });
    this.camera = new THREE.PerspectiveCamera(50, canvas.width / canvas.height, 0.01, 100);
    this.camera.position.set(3, 2, 4);
    this.controls = new OrbitControls(this.camera, canvas);
    this.scene.background = new THREE.Color(0x1a1a22);
    this.scene.add(new THREE.AmbientLight(0xffffff, 0.6));
    const sun = new THREE.DirectionalLight(0xffffff, 0.8);
    sun.position.set(4, 8, 2);
    this.scene.add(sun);
    this.scene.add(new THREE.GridHelper(10, 20, 0x555566, 0x333344));

    this.start = new SkeletonActor(boneCount, COLORS.start);
    this.target = new SkeletonActor(boneCount, COLORS.target);
    this.live = new SkeletonActor(boneCount, COLORS.live);
    this.start.visible = false;
    this.target.visible = false;
    this.live.visible = false;
    this.scene.add(this.start.group, this.target.group, this.live.group);
  }

  setStartPose(pose: PoseResponse): void {
    this.start.setPose(pose.positions, this.parents);
    this.start.visible = true;
  }

  setTargetPose(pose: PoseResponse): void {
    this.target.setPose(pose.positions, this.parents);
    this.target.visible = true;
  }

  /** Only ever called with a frame received from the stream. */
  showStreamedFrame(frame: StreamFrame): void {
    this.live.setPose(frame.positions, this.parents);
    this.live.visible = true;
  }

  setPath(path: PathSpec | null): void {
    if (this.pathLine) {
      this.scene.remove(this.pathLine);
      this.pathLine = null;
    }
    for (const m of this.controlPointMeshes) this.scene.remove(m);
    this.controlPointMeshes = [];
    if (!path) return;
    const pts = path.positions.map(([x, z]) => new THREE.Vector3(x, 0.01, z));
    this.pathLine = new THREE.Line(
      new THREE.BufferGeometry().setFromPoints(pts),
      new THREE.LineBasicMaterial({ color: COLORS.path }),
    );
    this.scene.add(this.pathLine);
    const cpGeo = new THREE.SphereGeometry(0.04, 8, 8);
    const cpMat = new THREE.MeshBasicMaterial({ color: COLORS.controlPoint });
    for (const [x, z] of path.control_points) {
      const m = new THREE.Mesh(cpGeo, cpMat);
      m.position.set(x, 0.01, z);
      this.controlPointMeshes.push(m);
      this.scene.add(m);
    }
  }

  render(): void {
    this.controls.update();
    this.renderer.render(this.scene, this.camera);
  }
}
