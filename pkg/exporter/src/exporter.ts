/**
 * Export orchestration: images -> three embedded views per training sample,
 * LLM attributes -> composed prompts -> text embeddings, all written as one
 * validating bundle. The output file appears atomically (write to a
 * temporary path, validate, rename); a failed export leaves nothing behind.
 */

import { readFileSync, writeFileSync, renameSync, rmSync } from "node:fs";
import { join, dirname } from "node:path";

import { AUGMENTATION_RECIPE, strongView, weakView } from "./augment.js";
import { composePrompt, fetchAttributes } from "./attributes.js";
import { buildBundle, float32Section, int32Section, readBundle } from "./bundle.js";
import { LlmClient } from "./llm.js";
import { decodePpm, RawImage } from "./ppm.js";
import { VlmEncoder } from "./vlm.js";

export interface ClassEntry {
  name: string;
  train: string[]; // image paths relative to the images directory
  test: string[];
}

export interface ClassesFile {
  dataset: string;
  modality_prefix: string;
  connector: string;
  classes: ClassEntry[];
}

export interface ExportManifest {
  datasetId: string;
  imagesDir: string;
  classes: ClassesFile;
  llm: LlmClient;
  vlm: VlmEncoder;
  attributesPerClass: number;
  cacheDir: string;
  seed: number;
  outPath: string;
}

function unit(v: Float64Array): Float64Array {
  let norm = Math.sqrt(v.reduce((s, x) => s + x * x, 0));
  if (norm < 1e-12) norm = 1;
  return v.map((x) => x / norm);
}

export async function exportBundle(m: ExportManifest): Promise<void> {
  const { classes } = m;
  const k = classes.classes.length;
  if (k < 2) throw new Error("need at least 2 classes");
  const d = m.vlm.embedDim;

  // attributes first: any LLM failure aborts before image work
  const attributeTexts: string[][] = [];
  const attributeRows: Float64Array[] = [];
  for (const entry of classes.classes) {
    const attributes = await fetchAttributes({
      className: entry.name,
      prefixTemplate: classes.modality_prefix,
      connector: classes.connector,
      count: m.attributesPerClass,
      llm: m.llm,
      cacheDir: m.cacheDir,
    });
    attributeTexts.push(attributes);
    for (const attribute of attributes) {
      const prompt = composePrompt({
        className: entry.name,
        prefixTemplate: classes.modality_prefix,
        connector: classes.connector,
      }, attribute);
      attributeRows.push(unit(m.vlm.embedText(prompt)));
    }
  }

  // images: train rows carry real augmented views; test rows repeat the
  // original embedding in the view sections (the engine never reads them)
  const orig: Float64Array[] = [];
  const weak: Float64Array[] = [];
  const strong: Float64Array[] = [];
  const labels: number[] = [];
  let sampleIndex = 0;
  const loadImage = (rel: string): RawImage =>
    decodePpm(readFileSync(join(m.imagesDir, rel)));

  for (let ci = 0; ci < k; ci++) {
    for (const rel of classes.classes[ci].train) {
      const img = loadImage(rel);
      orig.push(unit(m.vlm.embedImage(img)));
      weak.push(unit(m.vlm.embedImage(weakView(img, m.seed, sampleIndex))));
      strong.push(unit(m.vlm.embedImage(strongView(img, m.seed, sampleIndex))));
      labels.push(ci);
      sampleIndex++;
    }
  }
  const nTrain = labels.length;
  for (let ci = 0; ci < k; ci++) {
    for (const rel of classes.classes[ci].test) {
      const img = loadImage(rel);
      const e = unit(m.vlm.embedImage(img));
      orig.push(e);
      weak.push(e);
      strong.push(e);
      labels.push(ci);
    }
  }
  const samples = labels.length;

  const blob = buildBundle({
    dataset: m.datasetId,
    embedDim: d,
    numClasses: k,
    attributesPerClass: m.attributesPerClass,
    classNames: classes.classes.map((c) => c.name),
    counts: { train: nTrain, test: samples - nTrain },
    extra: {
      attribute_texts: attributeTexts,
      augmentation: AUGMENTATION_RECIPE,
      vlm: m.vlm.modelId,
      llm: m.llm.modelId,
      image_source: m.imagesDir,
      attribute_cache: m.cacheDir,
    },
  }, [
    float32Section("IMG_ORIG", orig, [samples, d]),
    float32Section("IMG_WEAK", weak, [samples, d]),
    float32Section("IMG_STRONG", strong, [samples, d]),
    float32Section("ATTR", attributeRows, [k, m.attributesPerClass, d]),
    int32Section("LABELS", labels, [samples, 1]),
  ]);

  readBundle(blob); // self-validate before the file exists

  const tmp = join(dirname(m.outPath), `.${Date.now()}.bvlb.tmp`);
  try {
    writeFileSync(tmp, blob);
    renameSync(tmp, m.outPath);
  } catch (err) {
    rmSync(tmp, { force: true });
    throw err;
  }
}
