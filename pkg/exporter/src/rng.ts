/**
 * Deterministic random streams for the offline providers.
 *
 * splitmix64 over a BigInt counter: every value is a pure function of
 * (seed, tag, index), so exports are reproducible across machines.
 */

const GOLDEN = 0x9e3779b97f4a7c15n;
const MASK = (1n << 64n) - 1n;

function mix(z0: bigint): bigint {
  let z = (z0 + GOLDEN) & MASK;
  z = ((z ^ (z >> 30n)) * 0xbf58476d1ce4e5b9n) & MASK;
  z = ((z ^ (z >> 27n)) * 0x94d049bb133111ebn) & MASK;
  return (z ^ (z >> 31n)) & MASK;
}

function hashTag(tag: string): bigint {
  // FNV-1a over UTF-8 bytes
  let h = 0xcbf29ce484222325n;
  for (const byte of Buffer.from(tag, "utf-8")) {
    h = ((h ^ BigInt(byte)) * 0x100000001b3n) & MASK;
  }
  return h;
}

export class Stream {
  private counter = 0n;
  private readonly key: bigint;

  constructor(seed: number, ...tags: (string | number)[]) {
    let key = mix(BigInt(Math.trunc(seed)) & MASK);
    for (const tag of tags) {
      const t = typeof tag === "number" ? BigInt(Math.trunc(tag)) & MASK : hashTag(tag);
      key = mix(key ^ t);
    }
    this.key = key;
  }

  /** Uniform in [0, 1). */
  next(): number {
    const v = mix(this.key ^ mix(this.counter++));
    return Number(v >> 11n) / 9007199254740992; // 2^53
  }

  /** Standard normal via Box-Muller. */
  normal(): number {
    const u1 = Math.max(this.next(), 1e-15);
    const u2 = this.next();
    return Math.sqrt(-2 * Math.log(u1)) * Math.cos(2 * Math.PI * u2);
  }

  /** Uniform integer in [0, n). */
  int(n: number): number {
    return Math.min(n - 1, Math.floor(this.next() * n));
  }
}
