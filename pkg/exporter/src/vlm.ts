/**
 * Vision/text embedding providers behind one interface.
 *
 * Real deployments adapt a pretrained model (e.g. an ONNX image tower)
 * to VlmEncoder. The seeded provider ships with the package: a frozen
 * random two-layer projection over a downsampled image (or over hashed
 * text tokens), deterministic in its seed, producing unit-norm embeddings.
 * It carries no pretrained knowledge, but it preserves input geometry,
 * which is all the toy fixtures need.
 */

import { RawImage } from "./ppm.js";
import { Stream } from "./rng.js";

export interface VlmEncoder {
  readonly modelId: string;
  readonly embedDim: number;
  embedImage(image: RawImage): Float64Array;
  embedText(text: string): Float64Array;
}

const GRID = 8; // images are bilinearly pooled onto GRID x GRID x 3 features

export class SeededProjectionEncoder implements VlmEncoder {
  readonly modelId: string;
  readonly embedDim: number;
  private readonly wImg: Float64Array;  // (GRID*GRID*3) x hidden
  private readonly wTxt: Float64Array;  // 256 x hidden
  private readonly wOut: Float64Array;  // hidden x embedDim
  private readonly hidden: number;

  constructor(seed: number, embedDim = 64) {
    this.modelId = `seeded:${seed}`;
    this.embedDim = embedDim;
    this.hidden = 2 * embedDim;
    this.wImg = randomMatrix(seed, "img", GRID * GRID * 3, this.hidden);
    this.wTxt = randomMatrix(seed, "txt", 256, this.hidden);
    this.wOut = randomMatrix(seed, "out", this.hidden, embedDim);
  }

  embedImage(image: RawImage): Float64Array {
    const features = new Float64Array(GRID * GRID * 3);
    for (let gy = 0; gy < GRID; gy++) {
      for (let gx = 0; gx < GRID; gx++) {
        const x = (gx / (GRID - 1)) * (image.width - 1);
        const y = (gy / (GRID - 1)) * (image.height - 1);
        const x0 = Math.floor(x);
        const y0 = Math.floor(y);
        const x1 = Math.min(image.width - 1, x0 + 1);
        const y1 = Math.min(image.height - 1, y0 + 1);
        const fx = x - x0;
        const fy = y - y0;
        for (let c = 0; c < 3; c++) {
          const at = (xx: number, yy: number) =>
            image.pixels[(yy * image.width + xx) * 3 + c];
          features[(gy * GRID + gx) * 3 + c] =
            at(x0, y0) * (1 - fx) * (1 - fy) + at(x1, y0) * fx * (1 - fy) +
            at(x0, y1) * (1 - fx) * fy + at(x1, y1) * fx * fy;
        }
      }
    }
    return this.project(features, this.wImg, GRID * GRID * 3);
  }

  embedText(text: string): Float64Array {
    // byte-histogram features: crude, deterministic, text-sensitive
    const features = new Float64Array(256);
    const bytes = Buffer.from(text.toLowerCase(), "utf-8");
    for (let i = 0; i < bytes.length; i++) {
      features[bytes[i]] += 1;
      features[(bytes[i] + (i % 7) * 31) % 256] += 0.5;
    }
    const norm = Math.sqrt(features.reduce((s, v) => s + v * v, 0)) || 1;
    for (let i = 0; i < 256; i++) features[i] /= norm;
    return this.project(features, this.wTxt, 256);
  }

  private project(features: Float64Array, w: Float64Array, fanIn: number): Float64Array {
    const hidden = new Float64Array(this.hidden);
    for (let i = 0; i < fanIn; i++) {
      const f = features[i];
      if (f === 0) continue;
      for (let h = 0; h < this.hidden; h++) {
        hidden[h] += f * w[i * this.hidden + h];
      }
    }
    for (let h = 0; h < this.hidden; h++) hidden[h] = Math.tanh(hidden[h]);
    const out = new Float64Array(this.embedDim);
    for (let h = 0; h < this.hidden; h++) {
      const v = hidden[h];
      for (let d = 0; d < this.embedDim; d++) {
        out[d] += v * this.wOut[h * this.embedDim + d];
      }
    }
    let norm = Math.sqrt(out.reduce((s, v) => s + v * v, 0));
    if (norm < 1e-12) norm = 1;
    for (let d = 0; d < this.embedDim; d++) out[d] /= norm;
    return out;
  }
}

function randomMatrix(seed: number, tag: string, rows: number, cols: number): Float64Array {
  const stream = new Stream(seed, "vlm", tag);
  const scale = 1 / Math.sqrt(rows);
  const out = new Float64Array(rows * cols);
  for (let i = 0; i < out.length; i++) out[i] = stream.normal() * scale;
  return out;
}

/** Parse an encoder id: "seeded:<seed>" (optionally "seeded:<seed>:<dim>"). */
export function encoderFromId(id: string, embedDim: number): VlmEncoder {
  if (id.startsWith("seeded:")) {
    const parts = id.split(":");
    const seed = parseInt(parts[1], 10) || 0;
    const dim = parts.length > 2 ? parseInt(parts[2], 10) : embedDim;
    return new SeededProjectionEncoder(seed, dim);
  }
  throw new Error(
    `unknown vision-language model id "${id}"; this build ships the ` +
    "deterministic 'seeded:<seed>' provider — adapt a pretrained model " +
    "to the VlmEncoder interface for real exports");
}
