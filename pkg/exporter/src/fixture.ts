/**
 * Writes the 2-class, 4-image toy fixture: two visually distinct synthetic
 * cell-like classes (warm round blobs vs cool striped fields), 16x16 PPM,
 * one train and one test image per class, plus the classes.json manifest.
 *
 *   node dist/fixture.js <output-dir>
 */

import { mkdirSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { encodePpm, RawImage } from "./ppm.js";
import { Stream } from "./rng.js";

function blobImage(seed: number): RawImage {
  const size = 16;
  const stream = new Stream(seed, "blob");
  const cx = 6 + 4 * stream.next();
  const cy = 6 + 4 * stream.next();
  const pixels = new Float64Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const r2 = (x - cx) ** 2 + (y - cy) ** 2;
      const core = Math.exp(-r2 / 14);
      const i = (y * size + x) * 3;
      pixels[i] = 0.75 * core + 0.2 + 0.05 * stream.next();      // warm red
      pixels[i + 1] = 0.35 * core + 0.1 + 0.05 * stream.next();
      pixels[i + 2] = 0.1 + 0.05 * stream.next();
    }
  }
  return { width: size, height: size, pixels };
}

function stripeImage(seed: number): RawImage {
  const size = 16;
  const stream = new Stream(seed, "stripe");
  const phase = stream.next() * Math.PI;
  const pixels = new Float64Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      const wave = 0.5 + 0.45 * Math.sin(0.9 * x + phase);
      const i = (y * size + x) * 3;
      pixels[i] = 0.08 + 0.05 * stream.next();
      pixels[i + 1] = 0.3 * wave + 0.1 + 0.05 * stream.next();
      pixels[i + 2] = 0.7 * wave + 0.2 + 0.05 * stream.next();   // cool blue
    }
  }
  return { width: size, height: size, pixels };
}

export function writeFixture(dir: string): void {
  mkdirSync(dir, { recursive: true });
  writeFileSync(join(dir, "roundcell_0.ppm"), encodePpm(blobImage(1)));
  writeFileSync(join(dir, "roundcell_1.ppm"), encodePpm(blobImage(2)));
  writeFileSync(join(dir, "striped_0.ppm"), encodePpm(stripeImage(1)));
  writeFileSync(join(dir, "striped_1.ppm"), encodePpm(stripeImage(2)));
  writeFileSync(join(dir, "classes.json"), JSON.stringify({
    dataset: "toy-cells",
    modality_prefix: "a microscopic image of a {class}",
    connector: "which has",
    classes: [
      { name: "round cell", train: ["roundcell_0.ppm"], test: ["roundcell_1.ppm"] },
      { name: "striped tissue", train: ["striped_0.ppm"], test: ["striped_1.ppm"] },
    ],
  }, null, 2));
}

const target = process.argv[2];
if (target) {
  writeFixture(target);
  console.log(`fixture written to ${target}`);
}
