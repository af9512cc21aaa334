#!/usr/bin/env node
/**
 * extract --image crop.png --timestep 50 --layers 2,5,8,11 --seed 0 --out DIR
 *         [--crop x,y,w,h] [--crop-id ID] [--size 128] [--margin 0.1]
 *         [--model synthetic|/path/to/weights]
 */

import * as path from 'node:path'
import { parseArgs } from 'node:util'
import { ModelUnavailable, resolveBackbone } from './backbone.js'
import { CropSpec, ExtractionJob, LayerIndexError, ShapeMismatch, extract } from './extract.js'

function parseCrop(raw: string): CropSpec {
  const parts = raw.split(',').map(Number)
  if (parts.length !== 4 || parts.some((v) => !Number.isFinite(v)) || parts[2] <= 0 || parts[3] <= 0) {
    throw new Error(`bad --crop '${raw}', expected x,y,w,h`)
  }
  return { x: parts[0], y: parts[1], w: parts[2], h: parts[3] }
}

export function main(argv: string[]): number {
  const { values, positionals } = parseArgs({
    args: argv,
    allowPositionals: true,
    options: {
      image: { type: 'string' },
      out: { type: 'string' },
      timestep: { type: 'string', default: '50' },
      layers: { type: 'string', default: '2,5,8,11' },
      seed: { type: 'string', default: '0' },
      crop: { type: 'string' },
      'crop-id': { type: 'string' },
      size: { type: 'string', default: '128' },
      margin: { type: 'string', default: '0.1' },
      model: { type: 'string', default: 'synthetic' },
    },
  })
  if (positionals.length > 0 && positionals[0] !== 'extract') {
    console.error(`unknown command '${positionals[0]}' (only: extract)`)
    return 2
  }
  if (!values.image || !values.out) {
    console.error('required: --image and --out')
    return 2
  }
  const job: ExtractionJob = {
    imagePath: values.image,
    cropId: values['crop-id'] ?? path.basename(values.image).replace(/\.[^.]+$/, ''),
    crop: values.crop ? parseCrop(values.crop) : undefined,
    margin: Number(values.margin),
    size: Number(values.size),
    timestep: Number(values.timestep),
    layers: values.layers.split(',').map((v) => Number(v.trim())),
    seed: Number(values.seed),
    outDir: values.out,
  }
  try {
    const backbone = resolveBackbone(values.model)
    const result = extract(job, backbone)
    for (const file of result.files) console.log(file)
    console.log(result.manifestPath)
    return 0
  } catch (err) {
    if (err instanceof ModelUnavailable || err instanceof ShapeMismatch || err instanceof LayerIndexError) {
      console.error(`${err.constructor.name}: ${err.message}`)
      return 1
    }
    throw err
  }
}

const invokedDirectly =
  process.argv[1] && path.resolve(process.argv[1]) === new URL(import.meta.url).pathname
if (invokedDirectly) {
  process.exit(main(process.argv.slice(2)))
}
