import { describe, expect, it } from "vitest";

import { buildBundle, crc32, float32Section, int32Section, readBundle,
         stableStringify } from "../src/bundle.js";

function unitRow(d: number, axis: number): Float64Array {
  const v = new Float64Array(d);
  v[axis % d] = 1;
  return v;
}

function toyBundle() {
  const d = 4;
  const rows = [unitRow(d, 0), unitRow(d, 1), unitRow(d, 2), unitRow(d, 3)];
  const attrs = [unitRow(d, 0), unitRow(d, 1), unitRow(d, 2), unitRow(d, 3)];
  return buildBundle({
    dataset: "t", embedDim: d, numClasses: 2, attributesPerClass: 2,
    classNames: ["a", "b"], counts: { train: 2, test: 2 },
  }, [
    float32Section("IMG_ORIG", rows, [4, d]),
    float32Section("IMG_WEAK", rows, [4, d]),
    float32Section("IMG_STRONG", rows, [4, d]),
    float32Section("ATTR", attrs, [2, 2, d]),
    int32Section("LABELS", [0, 1, 0, 1], [4, 1]),
  ]);
}

describe("crc32", () => {
  it("matches the reference polynomial on known vectors", () => {
    expect(crc32(Buffer.from(""))).toBe(0);
    expect(crc32(Buffer.from("123456789", "ascii"))).toBe(0xcbf43926);
  });
});

describe("stableStringify", () => {
  it("sorts keys recursively with no whitespace", () => {
    expect(stableStringify({ b: 1, a: { d: [2, 1], c: null } }))
      .toBe('{"a":{"c":null,"d":[2,1]},"b":1}');
  });
});

describe("bundle writer/reader", () => {
  it("round-trips a valid bundle", () => {
    const blob = toyBundle();
    const loaded = readBundle(blob);
    expect(loaded.manifest.dataset).toBe("t");
    expect(loaded.sections.get("LABELS")!.payload.readInt32LE(4)).toBe(1);
  });

  it("rejects a flipped payload byte with the section name", () => {
    const blob = Buffer.from(toyBundle());
    const manifestLen = Number(blob.readBigUInt64LE(8));
    blob[16 + manifestLen + 2] ^= 0x40;
    expect(() => readBundle(blob)).toThrow(/corrupt section IMG_ORIG/);
  });

  it("rejects wrong magic", () => {
    const blob = Buffer.from(toyBundle());
    blob[0] = 0x58;
    expect(() => readBundle(blob)).toThrow(/not a bundle/);
  });

  it("rejects non-unit embedding rows", () => {
    const d = 4;
    const bad = new Float64Array(d).fill(0.9);
    const rows = [unitRow(d, 0), bad];
    const blob = buildBundle({
      dataset: "t", embedDim: d, numClasses: 2, attributesPerClass: 1,
      classNames: ["a", "b"], counts: { train: 2, test: 0 },
    }, [
      float32Section("IMG_ORIG", rows, [2, d]),
      float32Section("IMG_WEAK", rows, [2, d]),
      float32Section("IMG_STRONG", rows, [2, d]),
      float32Section("ATTR", [unitRow(d, 0), unitRow(d, 1)], [2, 1, d]),
      int32Section("LABELS", [0, 1], [2, 1]),
    ]);
    expect(() => readBundle(blob)).toThrow(/invalid embedding row 1 in section IMG_ORIG/);
  });

  it("is deterministic: same inputs give identical bytes", () => {
    expect(Buffer.compare(toyBundle(), toyBundle())).toBe(0);
  });
});
