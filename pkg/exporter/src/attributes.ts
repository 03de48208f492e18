/**
 * Class-attribute generation with a disk cache.
 *
 * Each class is described by N short visual attributes obtained from an LLM
 * via a structured instructional query that asks for a numbered list; the
 * parser takes the first N items and strips the numbering. Responses are
 * cached on disk keyed by (class, model, N): a rerun serves every class from
 * cache and makes zero network calls, which makes exports idempotent.
 *
 * Composite prompts follow the pattern: modality prefix (with the class name
 * substituted), a connector such as "which is" / "which has", then the
 * attribute text.
 */

import { createHash } from "node:crypto";
import { mkdirSync, existsSync, readFileSync, writeFileSync } from "node:fs";
import { join } from "node:path";

import { LlmClient } from "./llm.js";

export interface AttributeRequest {
  className: string;
  prefixTemplate: string; // e.g. "a microscopic image of a {class} cell"
  connector: string;      // "which is" or "which has"
  count: number;
  llm: LlmClient;
  cacheDir: string;
}

export function instructionFor(className: string, count: number): string {
  return (
    `List ${count} distinguishing visual characteristics of ${className} in ` +
    "a medical image. Answer with a numbered list of short phrases, one per line."
  );
}

export function parseNumberedList(text: string, count: number): string[] {
  const items: string[] = [];
  for (const rawLine of text.split(/\r?\n/)) {
    const line = rawLine.trim();
    if (!line) continue;
    const stripped = line.replace(/^\s*\d+[.)]\s*/, "").replace(/^[-*]\s*/, "");
    if (stripped) items.push(stripped);
    if (items.length === count) break;
  }
  return items;
}

function cacheKey(className: string, modelId: string, count: number): string {
  const digest = createHash("sha256")
    .update(JSON.stringify([className, modelId, count]))
    .digest("hex")
    .slice(0, 24);
  return `${digest}.json`;
}

export async function fetchAttributes(req: AttributeRequest): Promise<string[]> {
  mkdirSync(req.cacheDir, { recursive: true });
  const path = join(req.cacheDir, cacheKey(req.className, req.llm.modelId, req.count));
  if (existsSync(path)) {
    const cached = JSON.parse(readFileSync(path, "utf-8")) as {
      attributes: string[];
    };
    if (cached.attributes.length === req.count) return cached.attributes;
  }

  let attributes: string[];
  try {
    const raw = await req.llm.complete(instructionFor(req.className, req.count));
    attributes = parseNumberedList(raw, req.count);
  } catch (err) {
    throw new Error(`attribute generation failed for class "${req.className}": ${err}`);
  }
  if (attributes.length !== req.count || attributes.some((a) => !a)) {
    throw new Error(
      `attribute generation failed for class "${req.className}": expected ` +
      `${req.count} non-empty items, got ${attributes.length}`);
  }
  writeFileSync(path, JSON.stringify({
    class: req.className, model: req.llm.modelId, count: req.count,
    attributes,
  }, null, 2));
  return attributes;
}

export function composePrompt(req: Pick<AttributeRequest, "className" | "prefixTemplate" | "connector">,
                              attribute: string): string {
  const prefix = req.prefixTemplate.replaceAll("{class}", req.className);
  return `${prefix} ${req.connector} ${attribute}`;
}
