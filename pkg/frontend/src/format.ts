/**
 * Canonical 9-significant-digit decimal formatter.
 *
 * Identical (operation for operation) to the core package's formatter: the
 * only arithmetic is IEEE-754 division/multiplication against a table of
 * correctly-parsed powers of ten plus half-even rounding, so both
 * implementations emit the same bytes for the same double.  Neither
 * printf-style %g nor Number.prototype.toPrecision can be used directly:
 * they disagree about notation thresholds and trailing zeros.
 */

const POW10_MIN_EXP = -300;
const POW10: number[] = [];
for (let k = POW10_MIN_EXP; k <= 300; k++) {
  POW10.push(Number(`1e${k}`));
}

function roundHalfEven(v: number): number {
  const f = Math.floor(v);
  const r = v - f;
  if (r > 0.5) return f + 1;
  if (r < 0.5) return f;
  return f % 2 === 0 ? f : f + 1;
}

export function formatSig9(x: number): string {
  if (!Number.isFinite(x)) {
    throw new Error(`cannot serialize non-finite value ${x}`);
  }
  if (x === 0.0) return "0";
  const neg = x < 0.0;
  const a = neg ? -x : x;
  if (a < 1e-300 || a >= 1e300) {
    throw new Error(`magnitude out of serializable range: ${x}`);
  }
  // Largest e with 10^e <= a, by binary search over the table.
  let lo = 0;
  let hi = POW10.length - 1;
  while (lo < hi) {
    const mid = Math.floor((lo + hi + 1) / 2);
    if (POW10[mid] <= a) {
      lo = mid;
    } else {
      hi = mid - 1;
    }
  }
  let e = lo + POW10_MIN_EXP;
  let v = a / POW10[e - POW10_MIN_EXP];
  if (v >= 10.0) {
    e += 1;
    v = a / POW10[e - POW10_MIN_EXP];
  } else if (v < 1.0) {
    e -= 1;
    v = a / POW10[e - POW10_MIN_EXP];
  }
  let n = roundHalfEven(v * 1e8);
  if (n >= 1e9) {
    n = 1e8;
    e += 1;
  }
  let digits = String(n);
  let end = digits.length;
  while (end > 1 && digits[end - 1] === "0") end--;
  digits = digits.slice(0, end);

  let out: string;
  if (e >= -4 && e < 9) {
    if (e >= 0) {
      if (digits.length <= e + 1) {
        out = digits + "0".repeat(e + 1 - digits.length);
      } else {
        out = digits.slice(0, e + 1) + "." + digits.slice(e + 1);
      }
    } else {
      out = "0." + "0".repeat(-e - 1) + digits;
    }
  } else {
    const mantissa = digits.length > 1 ? digits[0] + "." + digits.slice(1) : digits[0];
    const sign = e < 0 ? "-" : "+";
    const mag = String(e < 0 ? -e : e).padStart(2, "0");
    out = `${mantissa}e${sign}${mag}`;
  }
  return neg ? "-" + out : out;
}
