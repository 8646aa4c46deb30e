import { describe, expect, it } from "vitest";

import { formatSig9 } from "../src/format.js";
import { iou3d, iouBev, makeBox, normalizeYaw } from "../src/geometry.js";
import { maxTotalAssignment, minCostAssignment } from "../src/assignment.js";
import { batchIou, updateMemorySerialized } from "../src/index.js";

describe("formatSig9", () => {
  const cases: Array<[number, string]> = [
    [0, "0"],
    [1, "1"],
    [0.5, "0.5"],
    [-0.125, "-0.125"],
    [100, "100"],
    [1 / 3, "0.333333333"],
    [Math.PI, "3.14159265"],
    [123456789.123, "123456789"],
    [1234567891.23, "1.23456789e+09"],
    [0.0001, "0.0001"],
    [1e-5, "1e-05"],
    [1.5e-7, "1.5e-07"],
    [0.144, "0.144"],
  ];
  it.each(cases)("formats %f as %s", (value, expected) => {
    expect(formatSig9(value)).toBe(expected);
  });

  it("is idempotent through parsing", () => {
    let state = 123456789;
    const rand = () => {
      // deterministic LCG, plenty for a smoke sweep
      state = (state * 1103515245 + 12345) % 2147483648;
      return state / 2147483648;
    };
    for (let i = 0; i < 20000; i++) {
      const x = (rand() * 2 - 1) * Math.pow(10, Math.floor(rand() * 12) - 6);
      if (x === 0) continue;
      const s = formatSig9(x);
      expect(formatSig9(Number(s))).toBe(s);
    }
  });

  it("rejects non-finite input", () => {
    expect(() => formatSig9(Number.NaN)).toThrow();
    expect(() => formatSig9(Number.POSITIVE_INFINITY)).toThrow();
  });
});

describe("geometry", () => {
  it("computes the offset-unit-square IoU exactly", () => {
    const a = makeBox(0, 0, 0, 1, 1, 1, 0);
    const b = makeBox(0.5, 0, 0, 1, 1, 1, 0);
    expect(iouBev(a, b)).toBeCloseTo(1 / 3, 12);
  });

  it("returns zero for disjoint boxes", () => {
    const a = makeBox(0, 0, 0, 1, 1, 1, 0.3);
    const b = makeBox(50, 0, 0, 1, 1, 1, 0.3);
    expect(iou3d(a, b)).toBe(0);
  });

  it("keeps pi as pi when normalizing", () => {
    expect(normalizeYaw(Math.PI)).toBe(Math.PI);
    expect(normalizeYaw(-Math.PI)).toBe(Math.PI);
    expect(normalizeYaw(0.7)).toBe(0.7);
  });
});

describe("assignment", () => {
  it("solves the 2x2 example", () => {
    expect(maxTotalAssignment([[0.9, 0.3], [0.4, 0.8]])).toEqual([[0, 0], [1, 1]]);
  });

  it("matches brute force on random square instances", () => {
    let state = 42;
    const rand = () => {
      state = (state * 1103515245 + 12345) % 2147483648;
      return state / 2147483648;
    };
    for (let trial = 0; trial < 60; trial++) {
      const n = 1 + Math.floor(rand() * 6);
      const cost: number[][] = [];
      for (let i = 0; i < n; i++) {
        cost.push(Array.from({ length: n }, () => rand()));
      }
      const assign = minCostAssignment(cost);
      let total = 0;
      for (let i = 0; i < n; i++) total += cost[i][assign[i]];

      // brute force over permutations
      const perm = Array.from({ length: n }, (_, i) => i);
      let best = Number.POSITIVE_INFINITY;
      const visit = (k: number) => {
        if (k === n) {
          let t = 0;
          for (let i = 0; i < n; i++) t += cost[i][perm[i]];
          best = Math.min(best, t);
          return;
        }
        for (let i = k; i < n; i++) {
          [perm[k], perm[i]] = [perm[i], perm[k]];
          visit(k + 1);
          [perm[k], perm[i]] = [perm[i], perm[k]];
        }
      };
      visit(0);
      expect(total).toBeCloseTo(best, 10);
    }
  });
});

describe("batchIou input handling", () => {
  it("rejects misaligned arrays", () => {
    expect(() => batchIou([1, 2, 3], [], "bev")).toThrow(/multiple of 7/);
  });

  it("handles an empty side", () => {
    const out = batchIou([], [0, 0, 0, 1, 1, 1, 0], "3d");
    expect(out.rows).toBe(0);
    expect(out.cols).toBe(1);
    expect(out.values).toEqual([]);
  });

  it("gives 1.0 for an identical axis-aligned pair", () => {
    const flat = [0, 0, 0, 4, 2, 1.5, 0];
    const out = batchIou(flat, flat, "3d");
    expect(out.values).toEqual([1]);
  });
});

describe("updateMemorySerialized error documents", () => {
  const detections = '{"id":"s0","detections":[]}\n';

  it("flags malformed options", () => {
    const out = updateMemorySerialized("", detections, '{"nope": 1}');
    expect(JSON.parse(out).error).toBe("bad_options");
    const out2 = updateMemorySerialized("", detections, "{bad");
    expect(JSON.parse(out2).error).toBe("bad_options");
  });

  it("flags malformed snapshots", () => {
    const out = updateMemorySerialized("{not json", detections, "{}");
    expect(JSON.parse(out).error).toBe("bad_snapshot");
    const wrongVersion = '{"format_version":9,"round":0,"voting_thresholds":{"t_ign":2,"t_rm":3},"variant":"consistency","scenes":[]}';
    expect(JSON.parse(updateMemorySerialized(wrongVersion, detections, "{}")).error).toBe("bad_snapshot");
  });

  it("flags malformed detections", () => {
    const out = updateMemorySerialized("", '{"id":"s0","detections":[{"cx":"x"}]}', "{}");
    expect(JSON.parse(out).error).toBe("bad_detections");
  });

  it("bootstraps an empty snapshot", () => {
    const dets = '{"id":"s0","detections":[{"cx":0,"cy":0,"cz":0.75,"l":4,"w":2,"h":1.5,"yaw":0.25,"cls_score":0.9,"iou_score":0.9}]}\n';
    const out = updateMemorySerialized("", dets, "{}");
    const doc = JSON.parse(out);
    expect(doc.format_version).toBe(1);
    expect(doc.round).toBe(1);
    expect(doc.scenes[0].entries[0].state).toBe("positive");
  });
});
