/** Inline SVG sparkline of a spectrum; the server ships numbers, not images. */

import { svgEl } from "./dom.js";
import type { Spectrum } from "./types.js";

export function sparkline(
  spectrum: Spectrum,
  width = 120,
  height = 28,
): SVGSVGElement {
  const svg = svgEl("svg", {
    class: "sparkline",
    width,
    height,
    viewBox: `0 0 ${width} ${height}`,
    "data-points": spectrum.wavelengths.length,
  });
  const n = spectrum.wavelengths.length;
  if (n === 0) return svg;

  const w0 = spectrum.wavelengths[0]!;
  const w1 = spectrum.wavelengths[n - 1]!;
  const values = spectrum.values;
  let vmin = Infinity;
  let vmax = -Infinity;
  for (const v of values) {
    if (v < vmin) vmin = v;
    if (v > vmax) vmax = v;
  }
  const spanW = w1 - w0 || 1;
  const spanV = vmax - vmin || 1;
  const pad = 2;
  const points = spectrum.wavelengths
    .map((w, i) => {
      const x = pad + ((w - w0) / spanW) * (width - 2 * pad);
      const y = height - pad - ((values[i]! - vmin) / spanV) * (height - 2 * pad);
      return `${x.toFixed(1)},${y.toFixed(1)}`;
    })
    .join(" ");
  svg.append(
    svgEl("polyline", { points, fill: "none", stroke: "currentColor", "stroke-width": 1.2 }),
  );
  return svg;
}
