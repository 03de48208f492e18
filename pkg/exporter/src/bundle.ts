/**
 * Writer (and validating reader) for the embedding-bundle container.
 *
 * Byte-compatible with docs/format.md in the engine repository: little-endian
 * throughout, magic "BVLB", version 1, a sorted-keys JSON manifest with a
 * section directory (offsets, lengths, CRC-32), then raw section payloads.
 * The reader performs the same validation the engine's loader does, so an
 * export can be checked before it ever leaves this process.
 */

export const MAGIC = Buffer.from("BVLB", "ascii");
export const VERSION = 1;

export interface SectionSpec {
  name: string;
  dtype: "float32" | "int32" | "bytes";
  shape: number[];
  payload: Buffer;
}

export interface BundleManifestInput {
  dataset: string;
  embedDim: number;
  numClasses: number;
  attributesPerClass: number;
  classNames: string[];
  counts: { train: number; test: number };
  extra?: Record<string, unknown>;
}

const CRC_TABLE = (() => {
  const table = new Uint32Array(256);
  for (let n = 0; n < 256; n++) {
    let c = n;
    for (let k = 0; k < 8; k++) {
      c = c & 1 ? 0xedb88320 ^ (c >>> 1) : c >>> 1;
    }
    table[n] = c >>> 0;
  }
  return table;
})();

export function crc32(buf: Buffer): number {
  let c = 0xffffffff;
  for (let i = 0; i < buf.length; i++) {
    c = CRC_TABLE[(c ^ buf[i]) & 0xff] ^ (c >>> 8);
  }
  return (c ^ 0xffffffff) >>> 0;
}

/** JSON.stringify with recursively sorted keys and no whitespace. */
export function stableStringify(value: unknown): string {
  if (Array.isArray(value)) {
    return `[${value.map(stableStringify).join(",")}]`;
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => `${JSON.stringify(k)}:${stableStringify(v)}`);
    return `{${entries.join(",")}}`;
  }
  return JSON.stringify(value);
}

export function float32Section(name: string, rows: Float64Array[],
                               shape: number[]): SectionSpec {
  const total = shape.reduce((a, b) => a * b, 1);
  const payload = Buffer.alloc(total * 4);
  let offset = 0;
  for (const row of rows) {
    for (const v of row) {
      payload.writeFloatLE(Math.fround(v), offset);
      offset += 4;
    }
  }
  if (offset !== payload.length) {
    throw new Error(`section ${name}: wrote ${offset} bytes, expected ${payload.length}`);
  }
  return { name, dtype: "float32", shape, payload };
}

export function int32Section(name: string, values: number[],
                             shape: number[]): SectionSpec {
  const payload = Buffer.alloc(values.length * 4);
  values.forEach((v, i) => payload.writeInt32LE(v, i * 4));
  return { name, dtype: "int32", shape, payload };
}

export function buildBundle(manifest: BundleManifestInput,
                            sections: SectionSpec[]): Buffer {
  const directory: Record<string, unknown>[] = [];
  let offset = 0;
  for (const s of sections) {
    directory.push({
      name: s.name, dtype: s.dtype, shape: s.shape,
      offset, length: s.payload.length, crc32: crc32(s.payload),
    });
    offset += s.payload.length;
  }
  const doc: Record<string, unknown> = {
    format_version: VERSION,
    dataset: manifest.dataset,
    embed_dim: manifest.embedDim,
    num_classes: manifest.numClasses,
    attributes_per_class: manifest.attributesPerClass,
    class_names: manifest.classNames,
    counts: manifest.counts,
    sections: directory,
    ...(manifest.extra ?? {}),
  };
  const manifestBytes = Buffer.from(stableStringify(doc), "utf-8");
  const header = Buffer.alloc(16);
  MAGIC.copy(header, 0);
  header.writeUInt32LE(VERSION, 4);
  header.writeBigUInt64LE(BigInt(manifestBytes.length), 8);
  return Buffer.concat([header, manifestBytes,
                        ...sections.map((s) => s.payload)]);
}

export interface LoadedBundle {
  manifest: Record<string, unknown>;
  sections: Map<string, { dtype: string; shape: number[]; payload: Buffer }>;
}

/** Full validation mirroring the engine loader; throws on any defect. */
export function readBundle(blob: Buffer): LoadedBundle {
  if (blob.length < 16 || !blob.subarray(0, 4).equals(MAGIC)) {
    throw new Error("not a bundle");
  }
  if (blob.readUInt32LE(4) !== VERSION) {
    throw new Error("unsupported bundle version");
  }
  const manifestLen = Number(blob.readBigUInt64LE(8));
  if (16 + manifestLen > blob.length) throw new Error("corrupt manifest");
  const manifest = JSON.parse(blob.subarray(16, 16 + manifestLen).toString("utf-8"));
  const payload = blob.subarray(16 + manifestLen);
  const sections = new Map<string, { dtype: string; shape: number[]; payload: Buffer }>();
  for (const sec of manifest.sections as {
    name: string; dtype: string; shape: number[]; offset: number;
    length: number; crc32: number;
  }[]) {
    if (sec.offset + sec.length > payload.length) {
      throw new Error(`corrupt section ${sec.name} (truncated)`);
    }
    const body = payload.subarray(sec.offset, sec.offset + sec.length);
    if (crc32(body) !== sec.crc32) {
      throw new Error(`corrupt section ${sec.name} (checksum mismatch)`);
    }
    sections.set(sec.name, { dtype: sec.dtype, shape: sec.shape, payload: body });
  }
  for (const required of ["IMG_ORIG", "IMG_WEAK", "IMG_STRONG", "ATTR", "LABELS"]) {
    if (!sections.has(required)) throw new Error(`missing section ${required}`);
  }
  for (const name of ["IMG_ORIG", "IMG_WEAK", "IMG_STRONG", "ATTR"]) {
    const { shape, payload: body } = sections.get(name)!;
    const d = shape[shape.length - 1];
    const rows = body.length / 4 / d;
    for (let r = 0; r < rows; r++) {
      let norm = 0;
      for (let c = 0; c < d; c++) {
        const v = body.readFloatLE((r * d + c) * 4);
        norm += v * v;
      }
      if (Math.abs(Math.sqrt(norm) - 1) > 1e-5) {
        throw new Error(`invalid embedding row ${r} in section ${name}`);
      }
    }
  }
  return { manifest, sections };
}
