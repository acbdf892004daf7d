/** Minimal image utilities: planar RGB in [0,1], blur, resize, PNG loading. */

import fs from "node:fs";
import { PNG } from "pngjs";

export interface RgbImage {
  height: number;
  width: number;
  /** Row-major RGB triples, length height * width * 3. */
  data: Float64Array;
}

export function readPng(path: string): RgbImage {
  const png = PNG.sync.read(fs.readFileSync(path));
  const data = new Float64Array(png.height * png.width * 3);
  for (let i = 0; i < png.height * png.width; i++) {
    data[i * 3] = png.data[i * 4] / 255;
    data[i * 3 + 1] = png.data[i * 4 + 1] / 255;
    data[i * 3 + 2] = png.data[i * 4 + 2] / 255;
  }
  return { height: png.height, width: png.width, data };
}

export function luminance(img: RgbImage): Float64Array {
  const out = new Float64Array(img.height * img.width);
  for (let i = 0; i < out.length; i++) {
    out[i] = 0.299 * img.data[i * 3] + 0.587 * img.data[i * 3 + 1]
           + 0.114 * img.data[i * 3 + 2];
  }
  return out;
}

/** One separable box-blur pass with clamped borders (radius r). */
function boxBlur(src: Float64Array, h: number, w: number, r: number): Float64Array {
  const tmp = new Float64Array(h * w);
  const out = new Float64Array(h * w);
  const norm = 1 / (2 * r + 1);
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      let acc = 0;
      for (let k = -r; k <= r; k++) {
        const xx = Math.min(w - 1, Math.max(0, x + k));
        acc += src[y * w + xx];
      }
      tmp[y * w + x] = acc * norm;
    }
  }
  for (let y = 0; y < h; y++) {
    for (let x = 0; x < w; x++) {
      let acc = 0;
      for (let k = -r; k <= r; k++) {
        const yy = Math.min(h - 1, Math.max(0, y + k));
        acc += tmp[yy * w + x];
      }
      out[y * w + x] = acc * norm;
    }
  }
  return out;
}

/** Three box passes approximate a Gaussian; deterministic. */
export function smooth(src: Float64Array, h: number, w: number, radius: number): Float64Array {
  let out = src;
  const r = Math.max(1, radius);
  for (let pass = 0; pass < 3; pass++) {
    out = boxBlur(out, h, w, r);
  }
  return out;
}

export function resizeBilinear(src: Float64Array, sh: number, sw: number,
                               dh: number, dw: number): Float64Array {
  if (sh === dh && sw === dw) {
    return Float64Array.from(src);
  }
  const out = new Float64Array(dh * dw);
  for (let y = 0; y < dh; y++) {
    const fy = dh === 1 ? 0 : (y * (sh - 1)) / (dh - 1);
    const y0 = Math.floor(fy);
    const y1 = Math.min(sh - 1, y0 + 1);
    const wy = fy - y0;
    for (let x = 0; x < dw; x++) {
      const fx = dw === 1 ? 0 : (x * (sw - 1)) / (dw - 1);
      const x0 = Math.floor(fx);
      const x1 = Math.min(sw - 1, x0 + 1);
      const wx = fx - x0;
      out[y * dw + x] =
        (1 - wy) * ((1 - wx) * src[y0 * sw + x0] + wx * src[y0 * sw + x1]) +
        wy * ((1 - wx) * src[y1 * sw + x0] + wx * src[y1 * sw + x1]);
    }
  }
  return out;
}
