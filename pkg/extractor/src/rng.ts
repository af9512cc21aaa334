/** Deterministic random numbers: the same seed must reproduce every byte. */

/** splitmix64-style integer scrambler over a 32-bit counter stream. */
export class Rng {
  private state: number

  constructor(seed: number) {
    this.state = seed >>> 0
  }

  /** uniform in [0, 1) */
  next(): number {
    // mulberry32
    this.state = (this.state + 0x6d2b79f5) >>> 0
    let t = this.state
    t = Math.imul(t ^ (t >>> 15), t | 1)
    t ^= t + Math.imul(t ^ (t >>> 7), t | 61)
    return ((t ^ (t >>> 14)) >>> 0) / 4294967296
  }

  /** standard normal via Box-Muller (always consumes two uniforms) */
  gaussian(): number {
    const u = Math.max(this.next(), 1e-12)
    const v = this.next()
    return Math.sqrt(-2 * Math.log(u)) * Math.cos(2 * Math.PI * v)
  }

  fillGaussian(out: Float32Array): void {
    for (let i = 0; i < out.length; i++) out[i] = this.gaussian()
  }
}

/** stable 32-bit hash for deriving per-purpose seeds from one job seed */
export function hashSeed(base: number, ...parts: (number | string)[]): number {
  let h = (base ^ 0x9e3779b9) >>> 0
  for (const part of parts) {
    const s = String(part)
    for (let i = 0; i < s.length; i++) {
      h = (Math.imul(h ^ s.charCodeAt(i), 0x01000193) + 0x6546b64) >>> 0
    }
  }
  return h >>> 0
}
