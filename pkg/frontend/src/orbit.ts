/**
 * Orbit-camera state and pose math.
 *
 * The server expects a camera-to-world matrix with +z looking at the
 * target and +y as world-down (image rows grow downward), row-major,
 * 16 floats. The camera sits on a sphere around the look-at point.
 */

export interface OrbitState {
  azimuth: number; // radians around world +z
  elevation: number; // radians above the equator, clamped inside (-pi/2, pi/2)
  radius: number; // world units, > 0
  lookAt: [number, number, number];
}

export const ELEVATION_LIMIT = Math.PI / 2 - 1e-3;

export function clampOrbit(state: OrbitState): OrbitState {
  return {
    ...state,
    elevation: Math.min(ELEVATION_LIMIT, Math.max(-ELEVATION_LIMIT, state.elevation)),
    radius: Math.max(state.radius, 1e-6),
  };
}

type Vec3 = [number, number, number];

const sub = (a: Vec3, b: Vec3): Vec3 => [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
const cross = (a: Vec3, b: Vec3): Vec3 => [
  a[1] * b[2] - a[2] * b[1],
  a[2] * b[0] - a[0] * b[2],
  a[0] * b[1] - a[1] * b[0],
];
const norm = (a: Vec3): number => Math.hypot(a[0], a[1], a[2]);
const scale = (a: Vec3, s: number): Vec3 => [a[0] * s, a[1] * s, a[2] * s];

export function cameraPosition(state: OrbitState): Vec3 {
  const { azimuth, elevation, radius, lookAt } = clampOrbit(state);
  const ce = Math.cos(elevation);
  return [
    lookAt[0] + radius * ce * Math.cos(azimuth),
    lookAt[1] + radius * ce * Math.sin(azimuth),
    lookAt[2] + radius * Math.sin(elevation),
  ];
}

/** Right-handed look-at pose; up is world +z unless the view is (anti)parallel to it. */
export function poseFromOrbit(state: OrbitState): number[] {
  const s = clampOrbit(state);
  const eye = cameraPosition(s);
  const forward = sub(s.lookAt, eye);
  const z = scale(forward, 1 / norm(forward));
  let x = cross(z, [0, 0, 1]);
  if (norm(x) < 1e-8) {
    x = cross(z, [0, 1, 0]);
  }
  x = scale(x, 1 / norm(x));
  const y = cross(z, x);
  // column-major basis vectors packed into a row-major 4x4
  return [
    x[0], y[0], z[0], eye[0],
    x[1], y[1], z[1], eye[1],
    x[2], y[2], z[2], eye[2],
    0, 0, 0, 1,
  ];
}

/** ||R^T R - I||_F of the rotation block; ~0 for a valid pose. */
export function rotationError(pose: number[]): number {
  const r = [
    [pose[0], pose[1], pose[2]],
    [pose[4], pose[5], pose[6]],
    [pose[8], pose[9], pose[10]],
  ];
  let err = 0;
  for (let i = 0; i < 3; i++) {
    for (let j = 0; j < 3; j++) {
      let dot = 0;
      for (let k = 0; k < 3; k++) dot += r[k][i] * r[k][j];
      const target = i === j ? 1 : 0;
      err += (dot - target) * (dot - target);
    }
  }
  return Math.sqrt(err);
}

export function applyDrag(
  state: OrbitState,
  dxPixels: number,
  dyPixels: number,
  pixelsPerRadian = 200
): OrbitState {
  return clampOrbit({
    ...state,
    azimuth: state.azimuth - dxPixels / pixelsPerRadian,
    elevation: state.elevation + dyPixels / pixelsPerRadian,
  });
}

export function applyZoom(state: OrbitState, wheelDelta: number): OrbitState {
  return clampOrbit({ ...state, radius: state.radius * Math.exp(wheelDelta * 1e-3) });
}
