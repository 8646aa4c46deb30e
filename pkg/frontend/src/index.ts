/**
 * Foreign-callable surface of the pseudo-label engine.
 *
 * Two operations, both byte-compatible with the core package on identical
 * inputs: a batch rotated-IoU matrix over flat numeric arrays, and a
 * document-level memory update (snapshot text + detections text + options
 * text -> new snapshot text).  Everything is pure and re-entrant.
 */

import { formatSig9 } from "./format.js";
import { Box, iou3d, iouBev, makeBox } from "./geometry.js";
import { tripletPartition, updateBank, Bank } from "./memory.js";
import {
  DocumentError,
  dumpSnapshot,
  parseDetections,
  parseSnapshot,
  resolveOptions,
} from "./serialize.js";

export { formatSig9 } from "./format.js";
export { iou3d, iouBev, makeBox } from "./geometry.js";
export type { Box } from "./geometry.js";
export { minCostAssignment, maxTotalAssignment } from "./assignment.js";
export { DocumentError, dumpSnapshot, parseSnapshot, parseDetections } from "./serialize.js";

export type IouKind = "bev" | "3d";

export interface IouMatrix {
  rows: number;
  cols: number;
  values: number[];
}

function unflattenBoxes(flat: ArrayLike<number>, what: string): Box[] {
  if (flat.length % 7 !== 0) {
    throw new Error(`${what} length must be a multiple of 7, got ${flat.length}`);
  }
  const boxes: Box[] = [];
  for (let i = 0; i < flat.length; i += 7) {
    boxes.push(makeBox(flat[i], flat[i + 1], flat[i + 2], flat[i + 3], flat[i + 4], flat[i + 5], flat[i + 6]));
  }
  return boxes;
}

/** Row-major |a| x |b| rotated-IoU matrix over flat 7-number box arrays. */
export function batchIou(a: ArrayLike<number>, b: ArrayLike<number>, kind: IouKind): IouMatrix {
  if (kind !== "bev" && kind !== "3d") {
    throw new Error(`kind must be "bev" or "3d", got ${JSON.stringify(kind)}`);
  }
  const boxesA = unflattenBoxes(a, "first box array");
  const boxesB = unflattenBoxes(b, "second box array");
  const fn = kind === "bev" ? iouBev : iou3d;
  const values: number[] = [];
  for (const boxA of boxesA) {
    for (const boxB of boxesB) {
      values.push(fn(boxA, boxB));
    }
  }
  return { rows: boxesA.length, cols: boxesB.length, values };
}

/** Canonical text form of an IoU matrix (matches the fixture expectations). */
export function dumpIouMatrix(matrix: IouMatrix): string {
  const body = matrix.values.map(formatSig9).join(",");
  return '{"rows":' + String(matrix.rows) + ',"cols":' + String(matrix.cols) + ',"values":[' + body + "]}\n";
}

function errorDocument(code: string, message: string): string {
  return JSON.stringify({ error: code, message }) + "\n";
}

/**
 * One triplet-partition + memory-bank update at the document level.
 *
 * An empty snapshot document bootstraps a fresh round-0 bank.  Returns the
 * new snapshot text; parse failures return a structured error document
 * ({"error": "bad_snapshot" | "bad_detections" | "bad_options", ...})
 * instead of throwing.
 */
export function updateMemorySerialized(
  snapshotDoc: string,
  detectionsDoc: string,
  optionsDoc: string,
): string {
  try {
    const bank: Bank | null = snapshotDoc.trim() ? parseSnapshot(snapshotDoc) : null;
    const options = resolveOptions(optionsDoc, bank);
    const base: Bank = bank ?? {
      scenes: new Map(),
      round: 0,
      voting: options.voting,
      variant: options.variant,
    };
    const detections = parseDetections(detectionsDoc);
    const proxies = new Map<string, ReturnType<typeof tripletPartition>>();
    for (const [sceneId, dets] of detections) {
      proxies.set(
        sceneId,
        tripletPartition(
          dets.map((d) => ({ box: d.box, u: d.iouScore })),
          options.tNeg,
          options.tPos,
        ),
      );
    }
    const updated = updateBank(base, proxies, options.merge, options.voting, options.variant);
    return dumpSnapshot(updated);
  } catch (exc) {
    if (exc instanceof DocumentError) {
      return errorDocument(exc.code, exc.message);
    }
    throw exc;
  }
}
