/**
 * Quality-aware pseudo-label memory: match, merge, vote.
 *
 * Semantics and tie-breaks mirror the core package exactly; see its
 * memory_bank module for the full description.  All pairings below IoU 0.1
 * are unmatched in every strategy; matched entries re-enter with their miss
 * counter reset.
 */

import { Box, iou3d, makeBox, nmsIndices } from "./geometry.js";
import { maxTotalAssignment } from "./assignment.js";

export const MATCH_IOU_CUTOFF = 0.1;

export type BoxState = "positive" | "ignored";
export type Variant = "consistency" | "nms" | "bipartite";
export type MergeRule = "max" | "avg";

export interface PseudoBox {
  box: Box;
  u: number;
  state: BoxState;
  cnt: number;
}

export interface VotingThresholds {
  tIgn: number;
  tRm: number;
}

export interface SceneMemory {
  sceneId: string;
  round: number;
  entries: PseudoBox[];
}

export interface Bank {
  scenes: Map<string, SceneMemory>;
  round: number;
  voting: VotingThresholds;
  variant: Variant;
}

export interface MatchResult {
  matched: Array<[number, number, number]>; // memory index, proxy index, iou
  unmatchedMemory: number[];
  unmatchedProxy: number[];
  droppedMemory: number[];
  droppedProxy: number[];
}

function matchResult(
  matched: Array<[number, number, number]>,
  nMemory: number,
  nProxy: number,
  droppedMemory: number[] = [],
  droppedProxy: number[] = [],
): MatchResult {
  matched = matched.slice().sort((a, b) => a[0] - b[0] || a[1] - b[1]);
  const takenM = new Set<number>(droppedMemory);
  const takenP = new Set<number>(droppedProxy);
  for (const [j, v] of matched) {
    takenM.add(j);
    takenP.add(v);
  }
  const unmatchedMemory: number[] = [];
  for (let j = 0; j < nMemory; j++) if (!takenM.has(j)) unmatchedMemory.push(j);
  const unmatchedProxy: number[] = [];
  for (let v = 0; v < nProxy; v++) if (!takenP.has(v)) unmatchedProxy.push(v);
  return {
    matched,
    unmatchedMemory,
    unmatchedProxy,
    droppedMemory: droppedMemory.slice().sort((a, b) => a - b),
    droppedProxy: droppedProxy.slice().sort((a, b) => a - b),
  };
}

function iouMatrix(memory: PseudoBox[], proxy: PseudoBox[]): number[][] {
  return memory.map((m) => proxy.map((p) => iou3d(m.box, p.box)));
}

export function consistencyMatch(memory: PseudoBox[], proxy: PseudoBox[]): MatchResult {
  const nM = memory.length;
  const nP = proxy.length;
  if (nM === 0 || nP === 0) return matchResult([], nM, nP);
  const iou = iouMatrix(memory, proxy);
  const candidates: Array<[number, number, number]> = [];
  for (let j = 0; j < nM; j++) {
    let v = 0;
    for (let k = 1; k < nP; k++) {
      if (iou[j][k] > iou[j][v]) v = k;
    }
    candidates.push([-iou[j][v], j, v]);
  }
  candidates.sort((a, b) => a[0] - b[0] || a[1] - b[1] || a[2] - b[2]);
  const matched: Array<[number, number, number]> = [];
  const takenProxy = new Set<number>();
  for (const [neg, j, v] of candidates) {
    const a = -neg;
    if (a < MATCH_IOU_CUTOFF || takenProxy.has(v)) continue;
    takenProxy.add(v);
    matched.push([j, v, a]);
  }
  return matchResult(matched, nM, nP);
}

export function nmsMatch(memory: PseudoBox[], proxy: PseudoBox[]): MatchResult {
  const nM = memory.length;
  const nP = proxy.length;
  const entries = memory.concat(proxy);
  const boxes = entries.map((e) => e.box);
  const scores = entries.map((e) => e.u);
  const { kept, suppressedBy } = nmsIndices(boxes, scores, MATCH_IOU_CUTOFF);
  const victims = new Map<number, number[]>();
  for (const k of kept) victims.set(k, []);
  const order = Array.from(suppressedBy.keys()).sort((a, b) => {
    const d = scores[b] - scores[a];
    return d !== 0 ? d : a - b;
  });
  for (const i of order) {
    victims.get(suppressedBy.get(i)!)!.push(i);
  }
  const matched: Array<[number, number, number]> = [];
  const droppedM: number[] = [];
  const droppedP: number[] = [];
  for (const s of kept) {
    let partner: number | null = null;
    for (const i of victims.get(s)!) {
      const samePool = (s < nM) === (i < nM);
      if (samePool) {
        (i < nM ? droppedM : droppedP).push(i);
      } else if (partner === null) {
        partner = i;
      }
    }
    if (partner === null) continue;
    const [memIdx, proxIdx] = s < nM ? [s, partner - nM] : [partner, s - nM];
    matched.push([memIdx, proxIdx, iou3d(entries[memIdx].box, entries[nM + proxIdx].box)]);
  }
  return matchResult(matched, nM, nP, droppedM, droppedP);
}

export function bipartiteMatch(memory: PseudoBox[], proxy: PseudoBox[]): MatchResult {
  const nM = memory.length;
  const nP = proxy.length;
  if (nM === 0 || nP === 0) return matchResult([], nM, nP);
  const iou = iouMatrix(memory, proxy);
  const matched: Array<[number, number, number]> = [];
  for (const [j, v] of maxTotalAssignment(iou)) {
    if (iou[j][v] >= MATCH_IOU_CUTOFF) matched.push([j, v, iou[j][v]]);
  }
  return matchResult(matched, nM, nP);
}

export function mergeMatched(memEntry: PseudoBox, proxyEntry: PseudoBox): PseudoBox {
  const winner = memEntry.u <= proxyEntry.u ? proxyEntry : memEntry;
  return { box: winner.box, u: winner.u, state: winner.state, cnt: 0 };
}

export function weightedAvgMerge(memEntry: PseudoBox, proxyEntry: PseudoBox): PseudoBox {
  let wm = memEntry.u;
  let wp = proxyEntry.u;
  let total = wm + wp;
  if (total <= 0.0) {
    wm = 0.5;
    wp = 0.5;
    total = 1.0;
  }
  const a = memEntry.box;
  const b = proxyEntry.box;
  const yaw = Math.atan2(
    wm * Math.sin(a.yaw) + wp * Math.sin(b.yaw),
    wm * Math.cos(a.yaw) + wp * Math.cos(b.yaw),
  );
  const box = makeBox(
    (wm * a.cx + wp * b.cx) / total,
    (wm * a.cy + wp * b.cy) / total,
    (wm * a.cz + wp * b.cz) / total,
    (wm * a.l + wp * b.l) / total,
    (wm * a.w + wp * b.w) / total,
    (wm * a.h + wp * b.h) / total,
    yaw,
  );
  const winner = memEntry.u <= proxyEntry.u ? proxyEntry : memEntry;
  return { box, u: Math.max(memEntry.u, proxyEntry.u), state: winner.state, cnt: 0 };
}

export function memoryVoting(
  unmatchedMemory: PseudoBox[],
  unmatchedProxy: PseudoBox[],
  thresholds: VotingThresholds,
): { cached: PseudoBox[]; ignored: PseudoBox[]; discarded: number } {
  const cached: PseudoBox[] = [];
  const ignored: PseudoBox[] = [];
  let discarded = 0;
  const staged: Array<[PseudoBox, number]> = [];
  for (const e of unmatchedMemory) staged.push([e, e.cnt + 1]);
  for (const e of unmatchedProxy) staged.push([e, 0]);
  for (const [entry, cnt] of staged) {
    if (cnt >= thresholds.tRm) {
      discarded += 1;
    } else if (cnt >= thresholds.tIgn) {
      ignored.push({ box: entry.box, u: entry.u, state: "ignored", cnt });
    } else {
      cached.push({ box: entry.box, u: entry.u, state: entry.state, cnt });
    }
  }
  return { cached, ignored, discarded };
}

const MATCHERS: Record<Variant, (m: PseudoBox[], p: PseudoBox[]) => MatchResult> = {
  consistency: consistencyMatch,
  nms: nmsMatch,
  bipartite: bipartiteMatch,
};

export function updateMemory(
  memory: SceneMemory,
  proxy: PseudoBox[],
  variant: Variant,
  merge: MergeRule,
  thresholds: VotingThresholds,
): SceneMemory {
  const result = MATCHERS[variant](memory.entries, proxy);
  const mergeFn = merge === "max" ? mergeMatched : weightedAvgMerge;
  const merged = result.matched.map(([j, v]) => mergeFn(memory.entries[j], proxy[v]));
  const { cached, ignored } = memoryVoting(
    result.unmatchedMemory.map((j) => memory.entries[j]),
    result.unmatchedProxy.map((v) => proxy[v]),
    thresholds,
  );
  return {
    sceneId: memory.sceneId,
    round: memory.round + 1,
    entries: merged.concat(cached, ignored),
  };
}

export function updateBank(
  bank: Bank,
  proxies: Map<string, PseudoBox[]>,
  merge: MergeRule,
  voting: VotingThresholds,
  variant: Variant,
): Bank {
  const sceneIds = Array.from(new Set([...bank.scenes.keys(), ...proxies.keys()])).sort();
  const scenes = new Map<string, SceneMemory>();
  for (const sceneId of sceneIds) {
    const memory =
      bank.scenes.get(sceneId) ?? { sceneId, round: bank.round, entries: [] };
    scenes.set(sceneId, updateMemory(memory, proxies.get(sceneId) ?? [], variant, merge, voting));
  }
  return { scenes, round: bank.round + 1, voting, variant };
}

export function tripletPartition(
  dets: Array<{ box: Box; u: number }>,
  tNeg: number,
  tPos: number,
): PseudoBox[] {
  const out: PseudoBox[] = [];
  for (const det of dets) {
    if (det.u >= tPos) {
      out.push({ box: det.box, u: det.u, state: "positive", cnt: 0 });
    } else if (det.u >= tNeg) {
      out.push({ box: det.box, u: det.u, state: "ignored", cnt: 0 });
    }
  }
  return out;
}
