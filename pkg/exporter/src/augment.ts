/**
 * Pixel-space augmentations producing the weak and strong training views.
 *
 * Weak: horizontal flip plus a 10-degree rotation. Strong: horizontal flip,
 * color jitter, and Gaussian blur. Flips and jitter magnitudes are drawn
 * from a stream keyed by (seed, sample index, kind), so a rerun reproduces
 * the exact same views.
 */

import { RawImage } from "./ppm.js";
import { Stream } from "./rng.js";

export const AUGMENTATION_RECIPE = {
  weak: ["random horizontal flip", "10 degree rotation"],
  strong: ["random horizontal flip", "color jitter", "gaussian blur"],
};

export function horizontalFlip(img: RawImage): RawImage {
  const out = new Float64Array(img.pixels.length);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const src = (y * img.width + (img.width - 1 - x)) * 3;
      const dst = (y * img.width + x) * 3;
      out[dst] = img.pixels[src];
      out[dst + 1] = img.pixels[src + 1];
      out[dst + 2] = img.pixels[src + 2];
    }
  }
  return { width: img.width, height: img.height, pixels: out };
}

/** Bilinear rotation about the image center; out-of-frame samples clamp to the edge. */
export function rotate(img: RawImage, degrees: number): RawImage {
  const rad = (degrees * Math.PI) / 180;
  const cos = Math.cos(rad);
  const sin = Math.sin(rad);
  const cx = (img.width - 1) / 2;
  const cy = (img.height - 1) / 2;
  const out = new Float64Array(img.pixels.length);
  for (let y = 0; y < img.height; y++) {
    for (let x = 0; x < img.width; x++) {
      const dx = x - cx;
      const dy = y - cy;
      const sx = cx + cos * dx + sin * dy;
      const sy = cy - sin * dx + cos * dy;
      for (let c = 0; c < 3; c++) {
        out[(y * img.width + x) * 3 + c] = sampleBilinear(img, sx, sy, c);
      }
    }
  }
  return { width: img.width, height: img.height, pixels: out };
}

function sampleBilinear(img: RawImage, x: number, y: number, c: number): number {
  const x0 = Math.max(0, Math.min(img.width - 1, Math.floor(x)));
  const y0 = Math.max(0, Math.min(img.height - 1, Math.floor(y)));
  const x1 = Math.min(img.width - 1, x0 + 1);
  const y1 = Math.min(img.height - 1, y0 + 1);
  const fx = Math.max(0, Math.min(1, x - x0));
  const fy = Math.max(0, Math.min(1, y - y0));
  const at = (xx: number, yy: number) => img.pixels[(yy * img.width + xx) * 3 + c];
  return (
    at(x0, y0) * (1 - fx) * (1 - fy) +
    at(x1, y0) * fx * (1 - fy) +
    at(x0, y1) * (1 - fx) * fy +
    at(x1, y1) * fx * fy
  );
}

export function colorJitter(img: RawImage, stream: Stream): RawImage {
  const out = new Float64Array(img.pixels.length);
  // per-channel multiplicative scale in [0.8, 1.2] and shift in [-0.1, 0.1]
  const scales = [0, 1, 2].map(() => 0.8 + 0.4 * stream.next());
  const shifts = [0, 1, 2].map(() => -0.1 + 0.2 * stream.next());
  for (let i = 0; i < img.pixels.length; i++) {
    const c = i % 3;
    out[i] = Math.max(0, Math.min(1, img.pixels[i] * scales[c] + shifts[c]));
  }
  return { width: img.width, height: img.height, pixels: out };
}

export function gaussianBlur(img: RawImage, sigma = 1.0): RawImage {
  const radius = Math.max(1, Math.ceil(2 * sigma));
  const kernel: number[] = [];
  let total = 0;
  for (let k = -radius; k <= radius; k++) {
    const w = Math.exp(-(k * k) / (2 * sigma * sigma));
    kernel.push(w);
    total += w;
  }
  for (let i = 0; i < kernel.length; i++) kernel[i] /= total;

  const pass = (src: Float64Array, horizontal: boolean) => {
    const out = new Float64Array(src.length);
    for (let y = 0; y < img.height; y++) {
      for (let x = 0; x < img.width; x++) {
        for (let c = 0; c < 3; c++) {
          let acc = 0;
          for (let k = -radius; k <= radius; k++) {
            const xx = horizontal ? clamp(x + k, img.width - 1) : x;
            const yy = horizontal ? y : clamp(y + k, img.height - 1);
            acc += kernel[k + radius] * src[(yy * img.width + xx) * 3 + c];
          }
          out[(y * img.width + x) * 3 + c] = acc;
        }
      }
    }
    return out;
  };
  const once = pass(img.pixels, true);
  return { width: img.width, height: img.height, pixels: pass(once, false) };
}

function clamp(v: number, max: number): number {
  return v < 0 ? 0 : v > max ? max : v;
}

export function weakView(img: RawImage, seed: number, sampleIndex: number): RawImage {
  const stream = new Stream(seed, "aug", "weak", sampleIndex);
  let out = stream.next() < 0.5 ? horizontalFlip(img) : img;
  return rotate(out, 10);
}

export function strongView(img: RawImage, seed: number, sampleIndex: number): RawImage {
  const stream = new Stream(seed, "aug", "strong", sampleIndex);
  let out = stream.next() < 0.5 ? horizontalFlip(img) : img;
  out = colorJitter(out, stream);
  return gaussianBlur(out, 1.0);
}
