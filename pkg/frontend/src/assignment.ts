/**
 * Exact minimum-cost assignment on a square matrix (Hungarian algorithm
 * with potentials, O(n^3)).  Used by the bipartite matching strategy;
 * rectangular problems are padded to square with zero-cost dummy cells,
 * which preserves the optimum over the real cells.
 */

export function minCostAssignment(cost: number[][]): number[] {
  const n = cost.length;
  if (n === 0) return [];
  const INF = Number.POSITIVE_INFINITY;
  const u = new Array<number>(n + 1).fill(0);
  const v = new Array<number>(n + 1).fill(0);
  const match = new Array<number>(n + 1).fill(0); // match[j] = row assigned to column j, 1-based
  const way = new Array<number>(n + 1).fill(0);
  for (let i = 1; i <= n; i++) {
    match[0] = i;
    let j0 = 0;
    const minv = new Array<number>(n + 1).fill(INF);
    const used = new Array<boolean>(n + 1).fill(false);
    do {
      used[j0] = true;
      const i0 = match[j0];
      let delta = INF;
      let j1 = 0;
      for (let j = 1; j <= n; j++) {
        if (used[j]) continue;
        const cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (let j = 0; j <= n; j++) {
        if (used[j]) {
          u[match[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (match[j0] !== 0);
    do {
      const j1 = way[j0];
      match[j0] = match[j1];
      j0 = j1;
    } while (j0 !== 0);
  }
  const result = new Array<number>(n).fill(-1);
  for (let j = 1; j <= n; j++) {
    if (match[j] > 0) result[match[j] - 1] = j - 1;
  }
  return result;
}

/** Pairs (row, col) of the max-total assignment over a rectangular score matrix. */
export function maxTotalAssignment(score: number[][]): Array<[number, number]> {
  const nRows = score.length;
  const nCols = nRows > 0 ? score[0].length : 0;
  if (nRows === 0 || nCols === 0) return [];
  const n = Math.max(nRows, nCols);
  const cost: number[][] = [];
  for (let i = 0; i < n; i++) {
    const row = new Array<number>(n).fill(0);
    if (i < nRows) {
      for (let j = 0; j < nCols; j++) row[j] = -score[i][j];
    }
    cost.push(row);
  }
  const assign = minCostAssignment(cost);
  const pairs: Array<[number, number]> = [];
  for (let i = 0; i < nRows; i++) {
    const j = assign[i];
    if (j >= 0 && j < nCols) pairs.push([i, j]);
  }
  pairs.sort((p, q) => p[0] - q[0] || p[1] - q[1]);
  return pairs;
}
