// Camera and cube geometry. The formulas here mirror the server's renderer
// exactly: selection decisions made client-side must agree with the ones the
// server would make, so every operation is kept in the same order.

export type Vec3 = [number, number, number];

export interface CubeBounds {
  min: Vec3;
  size: number;
}

export interface CameraParams {
  position: Vec3;
  target: Vec3;
  up: Vec3;
  fovDeg: number;
  near: number;
  far: number;
  width: number;
  height: number;
}

export function sub(a: Vec3, b: Vec3): Vec3 {
  return [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
}

export function add(a: Vec3, b: Vec3): Vec3 {
  return [a[0] + b[0], a[1] + b[1], a[2] + b[2]];
}

export function scale(a: Vec3, s: number): Vec3 {
  return [a[0] * s, a[1] * s, a[2] * s];
}

export function dot(a: Vec3, b: Vec3): number {
  return a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
}

export function cross(a: Vec3, b: Vec3): Vec3 {
  return [
    a[1] * b[2] - a[2] * b[1],
    a[2] * b[0] - a[0] * b[2],
    a[0] * b[1] - a[1] * b[0],
  ];
}

export function norm(a: Vec3): number {
  return Math.sqrt(a[0] * a[0] + a[1] * a[1] + a[2] * a[2]);
}

export function normalize(a: Vec3): Vec3 {
  return scale(a, 1 / norm(a));
}

export interface CameraBasis {
  right: Vec3;
  up: Vec3;
  forward: Vec3;
}

export function basis(cam: CameraParams): CameraBasis {
  const forward = normalize(sub(cam.target, cam.position));
  const right = normalize(cross(forward, cam.up));
  const up = cross(right, forward);
  return { right, up, forward };
}

export function tanHalfFov(cam: CameraParams): number {
  return Math.tan((cam.fovDeg * (Math.PI / 180)) * 0.5);
}

export function cubeCorner(b: CubeBounds, i: number): Vec3 {
  return [
    b.min[0] + (i & 1 ? b.size : 0),
    b.min[1] + (i & 2 ? b.size : 0),
    b.min[2] + (i & 4 ? b.size : 0),
  ];
}

export function childBounds(b: CubeBounds, octant: number): CubeBounds {
  const h = b.size * 0.5;
  return {
    min: [
      b.min[0] + (octant & 1 ? h : 0),
      b.min[1] + (octant & 2 ? h : 0),
      b.min[2] + (octant & 4 ? h : 0),
    ],
    size: h,
  };
}

// Six planes as [nx, ny, nz, d]; a point p is inside when n.p + d >= 0.
export type Plane = [number, number, number, number];

export function frustumPlanes(cam: CameraParams): Plane[] {
  const { right, up, forward } = basis(cam);
  const th = tanHalfFov(cam);
  const aspect = cam.width / cam.height;
  const planes: Plane[] = [];
  const put = (n: Vec3, through: Vec3) => {
    const u = normalize(n);
    planes.push([u[0], u[1], u[2], -dot(u, through)]);
  };
  put(forward, add(cam.position, scale(forward, cam.near)));
  put(scale(forward, -1), add(cam.position, scale(forward, cam.far)));
  put(add(right, scale(forward, th * aspect)), cam.position);
  put(add(scale(right, -1), scale(forward, th * aspect)), cam.position);
  put(add(up, scale(forward, th)), cam.position);
  put(add(scale(up, -1), scale(forward, th)), cam.position);
  return planes;
}

export function frustumIntersects(planes: Plane[], b: CubeBounds): boolean {
  for (const [nx, ny, nz, d] of planes) {
    let outside = true;
    for (let i = 0; i < 8; i++) {
      const p = cubeCorner(b, i);
      if (nx * p[0] + ny * p[1] + nz * p[2] + d >= 0) {
        outside = false;
        break;
      }
    }
    if (outside) return false;
  }
  return true;
}

// Projected pixel extent of a cube: the larger of the horizontal and vertical
// spread of its corners. Infinity when any corner is at or behind the near
// plane, which forces refinement for nodes enclosing the camera.
export function screenSize(b: CubeBounds, cam: CameraParams): number {
  const { right, up, forward } = basis(cam);
  const th = tanHalfFov(cam);
  const aspect = cam.width / cam.height;
  let sxMin = Infinity;
  let sxMax = -Infinity;
  let syMin = Infinity;
  let syMax = -Infinity;
  for (let i = 0; i < 8; i++) {
    const d = sub(cubeCorner(b, i), cam.position);
    const zv = dot(d, forward);
    if (zv <= cam.near) return Infinity;
    const ndcX = dot(d, right) / (zv * th * aspect);
    const ndcY = dot(d, up) / (zv * th);
    const sx = (ndcX + 1) * 0.5 * cam.width;
    const sy = (1 - ndcY) * 0.5 * cam.height;
    if (sx < sxMin) sxMin = sx;
    if (sx > sxMax) sxMax = sx;
    if (sy < syMin) syMin = sy;
    if (sy > syMax) syMax = sy;
  }
  return Math.max(sxMax - sxMin, syMax - syMin);
}
