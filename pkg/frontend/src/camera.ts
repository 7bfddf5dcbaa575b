// Orbit camera: yaw/pitch around a target, wheel dolly, shift or right-drag
// to pan. Produces the plain CameraParams the selection math consumes.

import { add, basis, scale, tanHalfFov, type CameraParams, type CubeBounds, type Vec3 } from "./math.js";

const PITCH_LIMIT = 1.45;

export class OrbitCamera {
  target: Vec3 = [0.5, 0.5, 0.5];
  distance = 2.0;
  yaw = Math.PI;
  pitch = 0.25;
  fovDeg = 60;
  near = 0.05;
  far = 200;

  frame(bounds: CubeBounds): void {
    const h = bounds.size * 0.5;
    this.target = [bounds.min[0] + h, bounds.min[1] + h, bounds.min[2] + h];
    this.distance = bounds.size * 1.8;
    this.far = Math.max(this.far, bounds.size * 50);
  }

  position(): Vec3 {
    const cp = Math.cos(this.pitch);
    return add(this.target, [
      this.distance * cp * Math.sin(this.yaw),
      this.distance * Math.sin(this.pitch),
      this.distance * cp * Math.cos(this.yaw),
    ]);
  }

  params(width: number, height: number): CameraParams {
    return {
      position: this.position(),
      target: [...this.target],
      up: [0, 1, 0],
      fovDeg: this.fovDeg,
      near: this.near,
      far: this.far,
      width,
      height,
    };
  }

  rotate(dx: number, dy: number): void {
    this.yaw -= dx * 0.005;
    this.pitch += dy * 0.005;
    this.pitch = Math.min(PITCH_LIMIT, Math.max(-PITCH_LIMIT, this.pitch));
  }

  pan(dx: number, dy: number, viewHeight: number): void {
    const cam = this.params(viewHeight, viewHeight);
    const { right, up } = basis(cam);
    const worldPerPixel = (2 * this.distance * tanHalfFov(cam)) / viewHeight;
    this.target = add(this.target, scale(right, -dx * worldPerPixel));
    this.target = add(this.target, scale(up, dy * worldPerPixel));
  }

  dolly(steps: number): void {
    this.distance *= Math.pow(1.1, steps);
    this.distance = Math.max(1e-4, this.distance);
  }
}

export function attachOrbitControls(canvas: HTMLElement, camera: OrbitCamera): void {
  let dragging = false;
  let panning = false;
  let lastX = 0;
  let lastY = 0;

  canvas.addEventListener("pointerdown", (ev) => {
    dragging = true;
    panning = ev.button === 2 || ev.shiftKey;
    lastX = ev.clientX;
    lastY = ev.clientY;
    canvas.setPointerCapture(ev.pointerId);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!dragging) return;
    const dx = ev.clientX - lastX;
    const dy = ev.clientY - lastY;
    lastX = ev.clientX;
    lastY = ev.clientY;
    if (panning) camera.pan(dx, dy, canvas.clientHeight || 1);
    else camera.rotate(dx, dy);
  });
  canvas.addEventListener("pointerup", (ev) => {
    dragging = false;
    canvas.releasePointerCapture(ev.pointerId);
  });
  canvas.addEventListener("wheel", (ev) => {
    ev.preventDefault();
    camera.dolly(Math.sign(ev.deltaY));
  }, { passive: false });
  canvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
}
