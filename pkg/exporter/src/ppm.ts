/**
 * Raw images plus a binary PPM (P6) / PGM (P5) codec.
 *
 * The toy fixtures use PPM because it decodes with node builtins alone; a
 * real deployment plugs any decoder that produces a RawImage.
 */

export interface RawImage {
  width: number;
  height: number;
  /** Row-major RGB, values in [0, 1], length = width * height * 3. */
  pixels: Float64Array;
}

export function decodePpm(data: Buffer): RawImage {
  const magic = data.subarray(0, 2).toString("ascii");
  if (magic !== "P6" && magic !== "P5") {
    throw new Error(`unsupported image format (magic ${magic}); expected binary PPM/PGM`);
  }
  // header: magic, width, height, maxval, separated by whitespace/comments
  let pos = 2;
  const fields: number[] = [];
  while (fields.length < 3) {
    while (pos < data.length && isSpace(data[pos])) pos++;
    if (data[pos] === 0x23) { // '#' comment
      while (pos < data.length && data[pos] !== 0x0a) pos++;
      continue;
    }
    let start = pos;
    while (pos < data.length && !isSpace(data[pos])) pos++;
    fields.push(parseInt(data.subarray(start, pos).toString("ascii"), 10));
  }
  pos++; // single whitespace after maxval
  const [width, height, maxval] = fields;
  if (!(width > 0 && height > 0 && maxval > 0 && maxval < 65536)) {
    throw new Error("invalid PPM header");
  }
  const channels = magic === "P6" ? 3 : 1;
  const expected = width * height * channels;
  const body = data.subarray(pos, pos + expected);
  if (body.length !== expected) {
    throw new Error(`truncated PPM payload: have ${body.length}, want ${expected}`);
  }
  const pixels = new Float64Array(width * height * 3);
  for (let i = 0; i < width * height; i++) {
    for (let c = 0; c < 3; c++) {
      const src = channels === 3 ? body[i * 3 + c] : body[i];
      pixels[i * 3 + c] = src / maxval;
    }
  }
  return { width, height, pixels };
}

export function encodePpm(image: RawImage): Buffer {
  const header = Buffer.from(`P6\n${image.width} ${image.height}\n255\n`, "ascii");
  const body = Buffer.alloc(image.width * image.height * 3);
  for (let i = 0; i < body.length; i++) {
    body[i] = Math.max(0, Math.min(255, Math.round(image.pixels[i] * 255)));
  }
  return Buffer.concat([header, body]);
}

function isSpace(byte: number): boolean {
  return byte === 0x20 || byte === 0x09 || byte === 0x0a || byte === 0x0d;
}
