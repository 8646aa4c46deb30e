/**
 * Snapshot / detection document handling, byte-compatible with the core
 * package: compact JSON, scenes sorted by id, every float rendered by the
 * canonical 9-significant-digit formatter, trailing newline.
 */

import { formatSig9 } from "./format.js";
import { Box, makeBox } from "./geometry.js";
import {
  Bank,
  BoxState,
  MergeRule,
  PseudoBox,
  SceneMemory,
  Variant,
  VotingThresholds,
} from "./memory.js";

export const SNAPSHOT_FORMAT_VERSION = 1;

export class DocumentError extends Error {
  constructor(public code: "bad_snapshot" | "bad_detections" | "bad_options", message: string) {
    super(message);
  }
}

const BOX_FIELDS = ["cx", "cy", "cz", "l", "w", "h", "yaw"] as const;

function finiteNumber(obj: unknown, what: string, code: DocumentError["code"]): number {
  if (typeof obj !== "number" || !Number.isFinite(obj)) {
    throw new DocumentError(code, `${what} must be a finite number, got ${JSON.stringify(obj)}`);
  }
  return obj;
}

function parseBox(obj: unknown, what: string, code: DocumentError["code"]): Box {
  if (typeof obj !== "object" || obj === null || Array.isArray(obj)) {
    throw new DocumentError(code, `${what} must be an object`);
  }
  const rec = obj as Record<string, unknown>;
  const values = BOX_FIELDS.map((k) => {
    if (!(k in rec)) throw new DocumentError(code, `${what} missing field ${k}`);
    return finiteNumber(rec[k], `${what}.${k}`, code);
  });
  try {
    return makeBox(values[0], values[1], values[2], values[3], values[4], values[5], values[6]);
  } catch (exc) {
    throw new DocumentError(code, `${what}: ${(exc as Error).message}`);
  }
}

function entryText(e: PseudoBox): string {
  const b = e.box;
  return (
    '{"cx":' + formatSig9(b.cx)
    + ',"cy":' + formatSig9(b.cy)
    + ',"cz":' + formatSig9(b.cz)
    + ',"l":' + formatSig9(b.l)
    + ',"w":' + formatSig9(b.w)
    + ',"h":' + formatSig9(b.h)
    + ',"yaw":' + formatSig9(b.yaw)
    + ',"u":' + formatSig9(e.u)
    + ',"state":"' + e.state
    + '","cnt":' + String(e.cnt)
    + "}"
  );
}

export function dumpSnapshot(bank: Bank): string {
  const sceneIds = Array.from(bank.scenes.keys()).sort();
  const sceneParts = sceneIds.map((sceneId) => {
    const mem = bank.scenes.get(sceneId)!;
    const entries = mem.entries.map(entryText).join(",");
    return '{"scene_id":' + JSON.stringify(sceneId) + ',"entries":[' + entries + "]}";
  });
  return (
    '{"format_version":' + String(SNAPSHOT_FORMAT_VERSION)
    + ',"round":' + String(bank.round)
    + ',"voting_thresholds":{"t_ign":' + String(bank.voting.tIgn)
    + ',"t_rm":' + String(bank.voting.tRm)
    + '},"variant":"' + bank.variant
    + '","scenes":[' + sceneParts.join(",") + "]}\n"
  );
}

function parseEntry(obj: unknown, what: string): PseudoBox {
  const box = parseBox(obj, what, "bad_snapshot");
  const rec = obj as Record<string, unknown>;
  const u = finiteNumber(rec["u"], `${what}.u`, "bad_snapshot");
  if (u < 0 || u > 1) {
    throw new DocumentError("bad_snapshot", `${what}.u must be in [0, 1], got ${u}`);
  }
  const state = rec["state"];
  if (state !== "positive" && state !== "ignored") {
    throw new DocumentError("bad_snapshot", `${what}.state must be positive|ignored`);
  }
  const cnt = rec["cnt"];
  if (typeof cnt !== "number" || !Number.isInteger(cnt) || cnt < 0) {
    throw new DocumentError("bad_snapshot", `${what}.cnt must be a non-negative integer`);
  }
  return { box, u, state: state as BoxState, cnt };
}

export function parseSnapshot(text: string): Bank {
  let doc: unknown;
  try {
    doc = JSON.parse(text);
  } catch (exc) {
    throw new DocumentError("bad_snapshot", `not valid JSON: ${(exc as Error).message}`);
  }
  if (typeof doc !== "object" || doc === null || Array.isArray(doc)) {
    throw new DocumentError("bad_snapshot", "snapshot document must be a JSON object");
  }
  const rec = doc as Record<string, unknown>;
  if (rec["format_version"] !== SNAPSHOT_FORMAT_VERSION) {
    throw new DocumentError(
      "bad_snapshot",
      `unsupported snapshot format version ${JSON.stringify(rec["format_version"])}`,
    );
  }
  const round = rec["round"];
  if (typeof round !== "number" || !Number.isInteger(round) || round < 0) {
    throw new DocumentError("bad_snapshot", "round must be a non-negative integer");
  }
  const vt = rec["voting_thresholds"];
  if (typeof vt !== "object" || vt === null) {
    throw new DocumentError("bad_snapshot", "bad voting_thresholds structure");
  }
  const tIgn = (vt as Record<string, unknown>)["t_ign"];
  const tRm = (vt as Record<string, unknown>)["t_rm"];
  if (
    typeof tIgn !== "number" || typeof tRm !== "number"
    || !Number.isInteger(tIgn) || !Number.isInteger(tRm)
    || !(0 < tIgn && tIgn <= tRm)
  ) {
    throw new DocumentError("bad_snapshot", "bad voting thresholds");
  }
  const variant = rec["variant"];
  if (variant !== "consistency" && variant !== "nms" && variant !== "bipartite") {
    throw new DocumentError("bad_snapshot", `bad variant ${JSON.stringify(variant)}`);
  }
  const scenesObj = rec["scenes"];
  if (!Array.isArray(scenesObj)) {
    throw new DocumentError("bad_snapshot", "scenes must be an array");
  }
  const scenes = new Map<string, SceneMemory>();
  scenesObj.forEach((sceneObj, i) => {
    const what = `scenes[${i}]`;
    if (typeof sceneObj !== "object" || sceneObj === null) {
      throw new DocumentError("bad_snapshot", `${what} must be an object`);
    }
    const srec = sceneObj as Record<string, unknown>;
    const sceneId = srec["scene_id"];
    if (typeof sceneId !== "string" || !sceneId) {
      throw new DocumentError("bad_snapshot", `${what}.scene_id must be a non-empty string`);
    }
    if (scenes.has(sceneId)) {
      throw new DocumentError("bad_snapshot", `duplicate scene id ${sceneId}`);
    }
    const entriesObj = srec["entries"];
    if (!Array.isArray(entriesObj)) {
      throw new DocumentError("bad_snapshot", `${what}.entries must be an array`);
    }
    const entries = entriesObj.map((e, j) => parseEntry(e, `${what}.entries[${j}]`));
    if (round === 0 && entries.length > 0) {
      throw new DocumentError("bad_snapshot", "round-0 memory must be empty");
    }
    for (const e of entries) {
      if (e.cnt >= tRm) {
        throw new DocumentError("bad_snapshot", "persisted entry with cnt >= t_rm");
      }
    }
    scenes.set(sceneId, { sceneId, round, entries });
  });
  return { scenes, round, voting: { tIgn, tRm }, variant };
}

export interface DetectionEntry {
  box: Box;
  clsScore: number;
  iouScore: number;
}

export function parseDetections(text: string): Map<string, DetectionEntry[]> {
  const out = new Map<string, DetectionEntry[]>();
  const lines = text.split("\n");
  lines.forEach((line, idx) => {
    if (!line.trim()) return;
    const what = `detection line ${idx + 1}`;
    let obj: unknown;
    try {
      obj = JSON.parse(line);
    } catch (exc) {
      throw new DocumentError("bad_detections", `${what}: not valid JSON: ${(exc as Error).message}`);
    }
    if (typeof obj !== "object" || obj === null) {
      throw new DocumentError("bad_detections", `${what}: must be an object`);
    }
    const rec = obj as Record<string, unknown>;
    const id = rec["id"];
    if (typeof id !== "string" || !id) {
      throw new DocumentError("bad_detections", `${what}: needs a non-empty string id`);
    }
    if (out.has(id)) {
      throw new DocumentError("bad_detections", `${what}: duplicate scene id ${id}`);
    }
    const detsObj = rec["detections"] ?? [];
    if (!Array.isArray(detsObj)) {
      throw new DocumentError("bad_detections", `${what}: detections must be an array`);
    }
    const dets = detsObj.map((d, i) => {
      const box = parseBox(d, `${what} detection ${i}`, "bad_detections");
      const drec = d as Record<string, unknown>;
      const cls = finiteNumber(drec["cls_score"], `${what} detection ${i} cls_score`, "bad_detections");
      const iou = finiteNumber(drec["iou_score"], `${what} detection ${i} iou_score`, "bad_detections");
      for (const s of [cls, iou]) {
        if (s < 0 || s > 1) {
          throw new DocumentError("bad_detections", `${what} detection ${i}: scores must be in [0, 1]`);
        }
      }
      return { box, clsScore: cls, iouScore: iou };
    });
    out.set(id, dets);
  });
  return out;
}

export interface Options {
  variant: Variant;
  merge: MergeRule;
  tNeg: number;
  tPos: number;
  voting: VotingThresholds;
}

export function resolveOptions(optionsDoc: string, bank: Bank | null): Options {
  let raw: unknown = {};
  if (optionsDoc.trim()) {
    try {
      raw = JSON.parse(optionsDoc);
    } catch (exc) {
      throw new DocumentError("bad_options", `options not valid JSON: ${(exc as Error).message}`);
    }
  }
  if (typeof raw !== "object" || raw === null || Array.isArray(raw)) {
    throw new DocumentError("bad_options", "options must be a JSON object");
  }
  const rec = raw as Record<string, unknown>;
  const allowed = new Set(["variant", "merge", "t_neg", "t_pos", "t_ign", "t_rm"]);
  const unknown = Object.keys(rec).filter((k) => !allowed.has(k)).sort();
  if (unknown.length) {
    throw new DocumentError("bad_options", `unknown option keys: ${JSON.stringify(unknown)}`);
  }
  const variant = rec["variant"] ?? (bank ? bank.variant : "consistency");
  if (variant !== "consistency" && variant !== "nms" && variant !== "bipartite") {
    throw new DocumentError("bad_options", `bad variant ${JSON.stringify(variant)}`);
  }
  const merge = rec["merge"] ?? "max";
  if (merge !== "max" && merge !== "avg") {
    throw new DocumentError("bad_options", `bad merge rule ${JSON.stringify(merge)}`);
  }
  const tNeg = rec["t_neg"] === undefined ? 0.25 : rec["t_neg"];
  const tPos = rec["t_pos"] === undefined ? 0.6 : rec["t_pos"];
  if (typeof tNeg !== "number" || typeof tPos !== "number" || !(0 <= tNeg && tNeg <= tPos && tPos <= 1)) {
    throw new DocumentError("bad_options", `need 0 <= t_neg <= t_pos <= 1, got (${tNeg}, ${tPos})`);
  }
  const defaultVote = bank ? bank.voting : { tIgn: 2, tRm: 3 };
  const tIgn = rec["t_ign"] === undefined ? defaultVote.tIgn : rec["t_ign"];
  const tRm = rec["t_rm"] === undefined ? defaultVote.tRm : rec["t_rm"];
  if (
    typeof tIgn !== "number" || typeof tRm !== "number"
    || !Number.isInteger(tIgn) || !Number.isInteger(tRm) || !(0 < tIgn && tIgn <= tRm)
  ) {
    throw new DocumentError("bad_options", `need 0 < t_ign <= t_rm, got (${tIgn}, ${tRm})`);
  }
  return { variant, merge, tNeg, tPos, voting: { tIgn, tRm } };
}
