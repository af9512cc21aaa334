/**
 * Denoiser backbones.
 *
 * The real path loads pretrained latent-diffusion weights from disk and is
 * unavailable unless those files exist locally. For contract tests and
 * development there is a synthetic backbone: a small, fully deterministic
 * convolutional decoder with fixed seeded weights. It produces feature maps
 * with the right shapes, dtypes, and determinism guarantees; it does not
 * produce meaningful semantics.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import { Rng, hashSeed } from './rng.js'

export class ModelUnavailable extends Error {}

export interface LayerMap {
  [layer: number]: { channels: number; height: number; width: number; data: Float32Array }
}

export interface DenoiserBackbone {
  /** VAE-style encoding of an RGB crop (values in [-1, 1]) to the latent grid. */
  encodeLatent(rgb: Float32Array, size: number): { channels: number; size: number; data: Float32Array }
  /** One denoising pass; returns the requested decoder layer outputs. */
  decode(latent: Float32Array, latentSize: number, timestep: number, layers: number[]): LayerMap
}

const LATENT_CHANNELS = 4
const LATENT_FACTOR = 8
const DECODER_BLOCKS = 12
const UPSAMPLE_AT = 6 // blocks 0..5 at latent size, 6..11 at twice that
const WIDE_CHANNELS = 128
const NARROW_CHANNELS = 64
const WEIGHT_SEED = 0x5eedc0de // fixed: "pretrained" weights never vary per job

function channelsOf(block: number): number {
  return block < UPSAMPLE_AT ? WIDE_CHANNELS : NARROW_CHANNELS
}

function convWeights(tag: string, count: number): Float32Array {
  const rng = new Rng(hashSeed(WEIGHT_SEED, tag))
  const w = new Float32Array(count)
  for (let i = 0; i < count; i++) w[i] = rng.gaussian()
  return w
}

/** depthwise 3x3 convolution, reflect padding */
function depthwise(data: Float32Array, c: number, size: number, kernel: Float32Array): Float32Array {
  const out = new Float32Array(data.length)
  for (let ch = 0; ch < c; ch++) {
    const base = ch * size * size
    const kBase = ch * 9
    for (let y = 0; y < size; y++) {
      for (let x = 0; x < size; x++) {
        let acc = 0
        for (let dy = -1; dy <= 1; dy++) {
          const yy = Math.min(Math.max(y + dy, 0), size - 1)
          for (let dx = -1; dx <= 1; dx++) {
            const xx = Math.min(Math.max(x + dx, 0), size - 1)
            acc += data[base + yy * size + xx] * kernel[kBase + (dy + 1) * 3 + (dx + 1)]
          }
        }
        out[base + y * size + x] = acc
      }
    }
  }
  return out
}

/** pointwise channel mix with tanh nonlinearity, normalized fan-in */
function pointwise(
  data: Float32Array,
  cIn: number,
  cOut: number,
  size: number,
  weights: Float32Array,
  bias: Float32Array,
): Float32Array {
  const pixels = size * size
  const out = new Float32Array(cOut * pixels)
  const scale = 1 / Math.sqrt(cIn)
  for (let co = 0; co < cOut; co++) {
    const wBase = co * cIn
    for (let p = 0; p < pixels; p++) {
      let acc = bias[co]
      for (let ci = 0; ci < cIn; ci++) {
        acc += data[ci * pixels + p] * weights[wBase + ci] * scale
      }
      out[co * pixels + p] = Math.tanh(acc)
    }
  }
  return out
}

function upsample2x(data: Float32Array, c: number, size: number): Float32Array {
  const out = new Float32Array(c * size * 2 * size * 2)
  const big = size * 2
  for (let ch = 0; ch < c; ch++) {
    for (let y = 0; y < big; y++) {
      const sy = y >> 1
      for (let x = 0; x < big; x++) {
        out[ch * big * big + y * big + x] = data[ch * size * size + sy * size + (x >> 1)]
      }
    }
  }
  return out
}

export class SyntheticBackbone implements DenoiserBackbone {
  encodeLatent(rgb: Float32Array, size: number) {
    if (size % LATENT_FACTOR !== 0) {
      throw new Error(`crop size ${size} not divisible by ${LATENT_FACTOR}`)
    }
    const latentSize = size / LATENT_FACTOR
    const mix = convWeights('vae_mix', LATENT_CHANNELS * 3)
    const data = new Float32Array(LATENT_CHANNELS * latentSize * latentSize)
    // average-pool each 8x8 block, then mix the 3 colors into 4 channels
    for (let ly = 0; ly < latentSize; ly++) {
      for (let lx = 0; lx < latentSize; lx++) {
        const pooled = [0, 0, 0]
        for (let dy = 0; dy < LATENT_FACTOR; dy++) {
          for (let dx = 0; dx < LATENT_FACTOR; dx++) {
            const p = ((ly * LATENT_FACTOR + dy) * size + lx * LATENT_FACTOR + dx) * 3
            pooled[0] += rgb[p]
            pooled[1] += rgb[p + 1]
            pooled[2] += rgb[p + 2]
          }
        }
        const inv = 1 / (LATENT_FACTOR * LATENT_FACTOR)
        for (let ch = 0; ch < LATENT_CHANNELS; ch++) {
          data[ch * latentSize * latentSize + ly * latentSize + lx] = Math.tanh(
            pooled[0] * inv * mix[ch * 3] +
              pooled[1] * inv * mix[ch * 3 + 1] +
              pooled[2] * inv * mix[ch * 3 + 2],
          )
        }
      }
    }
    return { channels: LATENT_CHANNELS, size: latentSize, data }
  }

  decode(latent: Float32Array, latentSize: number, timestep: number, layers: number[]): LayerMap {
    const wanted = new Set(layers)
    const captured: LayerMap = {}
    let size = latentSize
    let channels = channelsOf(0)
    let act = pointwise(
      latent,
      LATENT_CHANNELS,
      channels,
      size,
      convWeights('stem_w', channels * LATENT_CHANNELS),
      convWeights('stem_b', channels),
    )
    for (let block = 0; block < DECODER_BLOCKS; block++) {
      if (block === UPSAMPLE_AT) {
        act = upsample2x(act, channels, size)
        size *= 2
      }
      const cIn = channels
      channels = channelsOf(block)
      const dw = depthwise(act, cIn, size, convWeights(`dw_${block}`, cIn * 9))
      act = pointwise(
        dw,
        cIn,
        channels,
        size,
        convWeights(`pw_${block}`, channels * cIn),
        convWeights(`pb_${block}`, channels),
      )
      // timestep conditioning: sinusoidal per-channel shift
      const pixels = size * size
      for (let ch = 0; ch < channels; ch++) {
        const shift = 0.05 * Math.sin(timestep / 1000 * Math.PI * (1 + (ch % 7)))
        for (let p = 0; p < pixels; p++) act[ch * pixels + p] += shift
      }
      if (wanted.has(block)) {
        captured[block] = {
          channels,
          height: size,
          width: size,
          data: Float32Array.from(act),
        }
      }
    }
    return captured
  }
}

/**
 * Load a pretrained backbone from a local weights directory. This build
 * ships no weights; the call documents the contract and fails cleanly.
 */
export function loadPretrainedBackbone(modelDir: string): DenoiserBackbone {
  const manifest = path.join(modelDir, 'model.json')
  if (!fs.existsSync(manifest)) {
    throw new ModelUnavailable(
      `no pretrained weights at ${modelDir} (expected ${manifest}); ` +
        `pass --model synthetic for the deterministic test backbone`,
    )
  }
  throw new ModelUnavailable(
    `pretrained backbone loading is not bundled in this build (${manifest} found, loader missing)`,
  )
}

export function resolveBackbone(model: string): DenoiserBackbone {
  if (model === 'synthetic') return new SyntheticBackbone()
  return loadPretrainedBackbone(model)
}
