/**
 * biovlm-exporter command line.
 *
 *   export --images <dir> --classes <file> --out <bundle>
 *          --llm <id> --vlm <id> [--attributes N] [--cache dir]
 *          [--embed-dim d] [--seed s]
 *
 * LLM ids: "stub:<seed>" for the deterministic offline provider, anything
 * else is treated as an OpenAI-compatible model id (endpoint and key via
 * BIOVLM_LLM_BASE_URL / BIOVLM_LLM_API_KEY). VLM ids: "seeded:<seed>".
 * Prints "llm_calls=<n>" on success so callers can verify cache behavior.
 */

import { parseArgs } from "node:util";
import { readFileSync } from "node:fs";

import { exportBundle, ClassesFile } from "./exporter.js";
import { clientFromId } from "./llm.js";
import { encoderFromId } from "./vlm.js";

async function main(): Promise<number> {
  const { values, positionals } = parseArgs({
    allowPositionals: true,
    options: {
      images: { type: "string" },
      classes: { type: "string" },
      out: { type: "string" },
      llm: { type: "string", default: "stub:0" },
      vlm: { type: "string", default: "seeded:0" },
      attributes: { type: "string", default: "10" },
      cache: { type: "string", default: "attribute_cache" },
      "embed-dim": { type: "string", default: "64" },
      seed: { type: "string", default: "0" },
    },
  });

  if (positionals[0] !== "export") {
    console.error("usage: export --images <dir> --classes <file> --out <bundle> [options]");
    return 2;
  }
  for (const required of ["images", "classes", "out"] as const) {
    if (!values[required]) {
      console.error(`missing required flag --${required}`);
      return 2;
    }
  }

  const classes = JSON.parse(readFileSync(values.classes!, "utf-8")) as ClassesFile;
  const llm = clientFromId(values.llm!);
  const vlm = encoderFromId(values.vlm!, parseInt(values["embed-dim"]!, 10));

  await exportBundle({
    datasetId: classes.dataset,
    imagesDir: values.images!,
    classes,
    llm,
    vlm,
    attributesPerClass: parseInt(values.attributes!, 10),
    cacheDir: values.cache!,
    seed: parseInt(values.seed!, 10),
    outPath: values.out!,
  });
  console.log(`wrote ${values.out} llm_calls=${llm.calls}`);
  return 0;
}

main().then(
  (code) => process.exit(code),
  (err) => {
    console.error(String(err));
    process.exit(1);
  },
);
