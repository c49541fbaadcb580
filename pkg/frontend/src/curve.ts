/**
 * Geometry for the cumulative true-positive curve, as pure functions:
 * curve values in, SVG polyline points out.
 */

export const CURVE_WIDTH = 320;
export const CURVE_HEIGHT = 160;
const PAD = 8;

function round2(v: number): number {
  return Math.round(v * 100) / 100;
}

/**
 * Map curve values to "x,y x,y ..." polyline points. Rank 1 sits at the
 * left edge, the highest value (at least 1, so a flat zero curve stays
 * on the baseline) at the top.
 */
export function curvePoints(
  curve: readonly number[],
  width = CURVE_WIDTH,
  height = CURVE_HEIGHT,
): string {
  if (curve.length === 0) return "";
  const innerW = width - 2 * PAD;
  const innerH = height - 2 * PAD;
  const maxY = Math.max(1, ...curve);
  const step = curve.length > 1 ? innerW / (curve.length - 1) : 0;
  return curve
    .map((v, i) => {
      const x = curve.length > 1 ? PAD + i * step : width / 2;
      const y = height - PAD - (v / maxY) * innerH;
      return `${round2(x)},${round2(y)}`;
    })
    .join(" ");
}

export function finalTp(curve: readonly number[]): number {
  return curve.length > 0 ? curve[curve.length - 1]! : 0;
}
