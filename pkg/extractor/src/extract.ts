/**
 * Extraction pipeline: crop -> latent -> forward-noise at the configured
 * timestep -> one denoising pass -> capture decoder layers -> write one
 * .dfm per layer plus a manifest the pose pipeline can validate against.
 */

import * as fs from 'node:fs'
import * as path from 'node:path'
import { DenoiserBackbone } from './backbone.js'
import { encodeDfm } from './dfm.js'
import { RgbImage, decodePng } from './png.js'
import { Rng, hashSeed } from './rng.js'

export const SCHEDULE_STEPS = 1000
const BETA_START = 1e-4
const BETA_END = 0.02

export class ShapeMismatch extends Error {}
export class LayerIndexError extends Error {}

export interface CropSpec {
  x: number
  y: number
  w: number
  h: number
}

export interface ExtractionJob {
  imagePath: string
  cropId: string
  crop?: CropSpec // defaults to the full image
  margin: number // square-padding margin, must match the pose pipeline's
  size: number // crop resolution (both axes)
  timestep: number
  layers: number[]
  seed: number
  outDir: string
}

/** cumulative alpha-bar of the linear-beta schedule at a 1-based timestep */
export function alphaBar(timestep: number): number {
  if (timestep < 1 || timestep > SCHEDULE_STEPS) {
    throw new Error(`timestep ${timestep} outside schedule 1..${SCHEDULE_STEPS}`)
  }
  let prod = 1
  for (let t = 0; t < timestep; t++) {
    const beta = BETA_START + ((BETA_END - BETA_START) * t) / (SCHEDULE_STEPS - 1)
    prod *= 1 - beta
  }
  return prod
}

/** z_t = sqrt(abar) z0 + sqrt(1 - abar) eps, with seeded noise */
export function forwardDiffuse(latent: Float32Array, timestep: number, rng: Rng): Float32Array {
  const abar = alphaBar(timestep)
  const keep = Math.sqrt(abar)
  const noise = Math.sqrt(1 - abar)
  const out = new Float32Array(latent.length)
  for (let i = 0; i < latent.length; i++) {
    out[i] = keep * latent[i] + noise * rng.gaussian()
  }
  return out
}

/** square crop with margin, bilinearly resampled to size x size, [-1, 1] */
export function cropAndResize(image: RgbImage, crop: CropSpec, margin: number, size: number): Float32Array {
  const side = Math.max(crop.w, crop.h) * (1 + margin)
  const cx = crop.x + crop.w / 2
  const cy = crop.y + crop.h / 2
  const originX = cx - side / 2
  const originY = cy - side / 2
  const scale = side / size
  const out = new Float32Array(size * size * 3)
  for (let y = 0; y < size; y++) {
    // half-pixel centers, clamped at the image border
    const sy = Math.min(Math.max((y + 0.5) * scale - 0.5 + originY, 0), image.height - 1)
    const y0 = Math.floor(sy)
    const y1 = Math.min(y0 + 1, image.height - 1)
    const fy = sy - y0
    for (let x = 0; x < size; x++) {
      const sx = Math.min(Math.max((x + 0.5) * scale - 0.5 + originX, 0), image.width - 1)
      const x0 = Math.floor(sx)
      const x1 = Math.min(x0 + 1, image.width - 1)
      const fx = sx - x0
      for (let c = 0; c < 3; c++) {
        const top =
          image.data[(y0 * image.width + x0) * 3 + c] * (1 - fx) +
          image.data[(y0 * image.width + x1) * 3 + c] * fx
        const bot =
          image.data[(y1 * image.width + x0) * 3 + c] * (1 - fx) +
          image.data[(y1 * image.width + x1) * 3 + c] * fx
        out[(y * size + x) * 3 + c] = ((top * (1 - fy) + bot * fy) / 255) * 2 - 1
      }
    }
  }
  return out
}

export interface ExtractionResult {
  files: string[]
  manifestPath: string
  shapes: { [layer: number]: [number, number, number] }
}

export function extract(job: ExtractionJob, backbone: DenoiserBackbone): ExtractionResult {
  if (job.layers.length === 0) throw new LayerIndexError('no layers requested')
  for (const layer of job.layers) {
    if (layer < 0 || layer > 11 || !Number.isInteger(layer)) {
      throw new LayerIndexError(`decoder layer ${layer} out of range 0..11`)
    }
  }
  const image = decodePng(fs.readFileSync(job.imagePath))
  const crop = job.crop ?? { x: 0, y: 0, w: image.width, h: image.height }
  const rgb = cropAndResize(image, crop, job.margin, job.size)

  const latent = backbone.encodeLatent(rgb, job.size)
  const rng = new Rng(hashSeed(job.seed, 'noise', job.cropId, job.timestep))
  const noisy = forwardDiffuse(latent.data, job.timestep, rng)
  const captured = backbone.decode(noisy, latent.size, job.timestep, job.layers)

  const shapes: { [layer: number]: [number, number, number] } = {}
  const files: string[] = []
  fs.mkdirSync(job.outDir, { recursive: true })
  let previousSize = 0
  for (const layer of [...job.layers].sort((a, b) => a - b)) {
    const tensor = captured[layer]
    if (!tensor) throw new LayerIndexError(`backbone did not produce layer ${layer}`)
    if (layer === 11 && tensor.height * 4 !== job.size) {
      throw new ShapeMismatch(
        `layer-11 grid ${tensor.height} must be one quarter of the crop (${job.size / 4})`,
      )
    }
    if (tensor.height < previousSize) {
      throw new ShapeMismatch('decoder layer sizes must be non-decreasing')
    }
    previousSize = tensor.height
    const file = path.join(job.outDir, `${job.cropId}_L${layer}.dfm`)
    fs.writeFileSync(
      file,
      encodeDfm({
        layerId: layer,
        channels: tensor.channels,
        height: tensor.height,
        width: tensor.width,
        data: tensor.data,
      }),
    )
    files.push(file)
    shapes[layer] = [tensor.channels, tensor.height, tensor.width]
  }

  const manifestPath = path.join(job.outDir, `${job.cropId}_manifest.json`)
  const manifest = {
    crop_id: job.cropId,
    timestep: job.timestep,
    seed: job.seed,
    size: job.size,
    layers: Object.fromEntries(
      Object.entries(shapes).map(([layer, dims]) => [layer, dims]),
    ),
  }
  fs.writeFileSync(manifestPath, JSON.stringify(manifest, null, 1) + '\n')
  return { files, manifestPath, shapes }
}
