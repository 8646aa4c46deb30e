/**
 * Upright oriented-box geometry: footprint clipping and rotated IoU.
 *
 * Every formula here mirrors the core package operation for operation (same
 * expressions, same evaluation order), so results agree bit-for-bit up to
 * the last-ulp differences of the trig library, which the 9-significant-
 * digit serialization absorbs.
 */

const TAU = 2 * Math.PI;

// Points this close to a clip edge count as inside.
const EDGE_TOLERANCE = 1e-12;

export interface Box {
  cx: number;
  cy: number;
  cz: number;
  l: number;
  w: number;
  h: number;
  yaw: number;
}

export function normalizeYaw(theta: number): number {
  if (!Number.isFinite(theta)) {
    throw new Error(`yaw must be finite, got ${theta}`);
  }
  if (theta > -Math.PI && theta <= Math.PI) {
    return theta;
  }
  let t = theta;
  while (t > Math.PI) t -= TAU;
  while (t <= -Math.PI) t += TAU;
  return t;
}

export function makeBox(cx: number, cy: number, cz: number, l: number, w: number, h: number, yaw: number): Box {
  for (const v of [cx, cy, cz, l, w, h]) {
    if (!Number.isFinite(v)) throw new Error(`box field must be finite, got ${v}`);
  }
  if (l <= 0 || w <= 0 || h <= 0) {
    throw new Error(`box sizes must be positive, got (${l}, ${w}, ${h})`);
  }
  return { cx, cy, cz, l, w, h, yaw: normalizeYaw(yaw) };
}

export function boxVolume(b: Box): number {
  return b.l * b.w * b.h;
}

type Pt = [number, number];

export function bevCorners(b: Box): Pt[] {
  const hl = b.l * 0.5;
  const hw = b.w * 0.5;
  const c = Math.cos(b.yaw);
  const s = Math.sin(b.yaw);
  const local: Pt[] = [
    [hl, hw],
    [-hl, hw],
    [-hl, -hw],
    [hl, -hw],
  ];
  return local.map(([x, y]) => [b.cx + x * c - y * s, b.cy + x * s + y * c]);
}

export function shoelaceArea(vertices: Pt[]): number {
  const n = vertices.length;
  let acc = 0.0;
  for (let i = 0; i < n; i++) {
    const [x0, y0] = vertices[i];
    const [x1, y1] = vertices[(i + 1) % n];
    acc += x0 * y1 - x1 * y0;
  }
  return Math.abs(acc) * 0.5;
}

function inside(px: number, py: number, ax: number, ay: number, bx: number, by: number): boolean {
  return (bx - ax) * (py - ay) - (by - ay) * (px - ax) >= -EDGE_TOLERANCE;
}

function intersect(
  sx: number, sy: number, ex: number, ey: number,
  ax: number, ay: number, bx: number, by: number,
): Pt {
  const dcx = ax - bx;
  const dcy = ay - by;
  const dpx = sx - ex;
  const dpy = sy - ey;
  const n1 = ax * by - ay * bx;
  const n2 = sx * ey - sy * ex;
  const n3 = 1.0 / (dcx * dpy - dcy * dpx);
  return [(n1 * dpx - n2 * dcx) * n3, (n1 * dpy - n2 * dcy) * n3];
}

export function clipConvex(subject: Pt[], clip: Pt[]): Pt[] {
  let output = subject.slice();
  const nclip = clip.length;
  for (let i = 0; i < nclip; i++) {
    if (output.length === 0) return [];
    const [ax, ay] = i > 0 ? clip[i - 1] : clip[nclip - 1];
    const [bx, by] = clip[i];
    const current = output;
    output = [];
    let [sx, sy] = current[current.length - 1];
    let sIn = inside(sx, sy, ax, ay, bx, by);
    for (const [ex, ey] of current) {
      const eIn = inside(ex, ey, ax, ay, bx, by);
      if (eIn) {
        if (!sIn) output.push(intersect(sx, sy, ex, ey, ax, ay, bx, by));
        output.push([ex, ey]);
      } else if (sIn) {
        output.push(intersect(sx, sy, ex, ey, ax, ay, bx, by));
      }
      sx = ex;
      sy = ey;
      sIn = eIn;
    }
  }
  return output;
}

export function polygonIntersectionArea(a: Pt[], b: Pt[]): number {
  const clipped = clipConvex(a, b);
  if (clipped.length < 3) return 0.0;
  return shoelaceArea(clipped);
}

function clamp01(x: number): number {
  if (x < 0.0) return 0.0;
  if (x > 1.0) return 1.0;
  return x;
}

export function iouBev(a: Box, b: Box): number {
  const inter = polygonIntersectionArea(bevCorners(a), bevCorners(b));
  const union = a.l * a.w + b.l * b.w - inter;
  return clamp01(inter / union);
}

export function iou3d(a: Box, b: Box): number {
  const za = a.h * 0.5;
  const zb = b.h * 0.5;
  const lo = Math.max(a.cz - za, b.cz - zb);
  const hi = Math.min(a.cz + za, b.cz + zb);
  const dz = hi - lo;
  if (dz <= 0.0) return 0.0;
  const interArea = polygonIntersectionArea(bevCorners(a), bevCorners(b));
  const inter = interArea * dz;
  const union = (a.l * a.w) * a.h + (b.l * b.w) * b.h - inter;
  return clamp01(inter / union);
}

/**
 * Greedy NMS bookkeeping: kept indices in score order plus a map from each
 * suppressed index to its suppressor.  Ties break by original index.
 */
export function nmsIndices(
  boxes: Box[], scores: number[], iouThresh: number,
): { kept: number[]; suppressedBy: Map<number, number> } {
  if (boxes.length !== scores.length) {
    throw new Error("boxes and scores must have equal length");
  }
  const order = boxes.map((_, i) => i).sort((a, b) => {
    const d = scores[b] - scores[a];
    return d !== 0 ? d : a - b;
  });
  const kept: number[] = [];
  const suppressedBy = new Map<number, number>();
  for (let pos = 0; pos < order.length; pos++) {
    const i = order[pos];
    if (suppressedBy.has(i)) continue;
    kept.push(i);
    for (let q = pos + 1; q < order.length; q++) {
      const j = order[q];
      if (suppressedBy.has(j)) continue;
      if (iou3d(boxes[i], boxes[j]) > iouThresh) {
        suppressedBy.set(j, i);
      }
    }
  }
  return { kept, suppressedBy };
}
