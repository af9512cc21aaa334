/**
 * Minimal PNG codec on node:zlib: 8-bit grayscale / RGB / RGBA,
 * non-interlaced. Enough to ingest crops and to build test images without
 * pulling a native dependency.
 */

import * as zlib from 'node:zlib'

const SIGNATURE = Buffer.from([0x89, 0x50, 0x4e, 0x47, 0x0d, 0x0a, 0x1a, 0x0a])

export interface RgbImage {
  width: number
  height: number
  /** row-major RGB triplets, length width*height*3 */
  data: Uint8Array
}

function crc32(buf: Buffer): number {
  let crc = ~0
  for (let i = 0; i < buf.length; i++) {
    crc ^= buf[i]
    for (let k = 0; k < 8; k++) {
      crc = (crc >>> 1) ^ (0xedb88320 & -(crc & 1))
    }
  }
  return ~crc >>> 0
}

function chunk(type: string, payload: Buffer): Buffer {
  const head = Buffer.alloc(8)
  head.writeUInt32BE(payload.length, 0)
  head.write(type, 4, 'ascii')
  const crcBuf = Buffer.alloc(4)
  crcBuf.writeUInt32BE(crc32(Buffer.concat([head.subarray(4), payload])), 0)
  return Buffer.concat([head, payload, crcBuf])
}

export function encodePng(image: RgbImage): Buffer {
  const { width, height, data } = image
  if (data.length !== width * height * 3) throw new Error('RGB data length mismatch')
  const ihdr = Buffer.alloc(13)
  ihdr.writeUInt32BE(width, 0)
  ihdr.writeUInt32BE(height, 4)
  ihdr.writeUInt8(8, 8) // bit depth
  ihdr.writeUInt8(2, 9) // color type: truecolor
  // compression, filter, interlace all zero
  const stride = width * 3
  const raw = Buffer.alloc((stride + 1) * height)
  for (let y = 0; y < height; y++) {
    raw[y * (stride + 1)] = 0 // filter: none
    raw.set(data.subarray(y * stride, (y + 1) * stride), y * (stride + 1) + 1)
  }
  const idat = zlib.deflateSync(raw, { level: 9 })
  return Buffer.concat([
    SIGNATURE,
    chunk('IHDR', ihdr),
    chunk('IDAT', idat),
    chunk('IEND', Buffer.alloc(0)),
  ])
}

function unfilter(raw: Buffer, width: number, height: number, bpp: number): Buffer {
  const stride = width * bpp
  const out = Buffer.alloc(stride * height)
  for (let y = 0; y < height; y++) {
    const filter = raw[y * (stride + 1)]
    const line = raw.subarray(y * (stride + 1) + 1, (y + 1) * (stride + 1))
    const prev = y > 0 ? out.subarray((y - 1) * stride, y * stride) : null
    const cur = out.subarray(y * stride, (y + 1) * stride)
    for (let x = 0; x < stride; x++) {
      const a = x >= bpp ? cur[x - bpp] : 0
      const b = prev ? prev[x] : 0
      const c = x >= bpp && prev ? prev[x - bpp] : 0
      let value = line[x]
      switch (filter) {
        case 0:
          break
        case 1:
          value = (value + a) & 0xff
          break
        case 2:
          value = (value + b) & 0xff
          break
        case 3:
          value = (value + ((a + b) >> 1)) & 0xff
          break
        case 4: {
          const p = a + b - c
          const pa = Math.abs(p - a)
          const pb = Math.abs(p - b)
          const pc = Math.abs(p - c)
          const pred = pa <= pb && pa <= pc ? a : pb <= pc ? b : c
          value = (value + pred) & 0xff
          break
        }
        default:
          throw new Error(`unsupported PNG filter ${filter}`)
      }
      cur[x] = value
    }
  }
  return out
}

export function decodePng(buf: Buffer): RgbImage {
  if (!buf.subarray(0, 8).equals(SIGNATURE)) throw new Error('not a PNG file')
  let width = 0
  let height = 0
  let colorType = -1
  const idat: Buffer[] = []
  let offset = 8
  while (offset < buf.length) {
    const length = buf.readUInt32BE(offset)
    const type = buf.toString('ascii', offset + 4, offset + 8)
    const payload = buf.subarray(offset + 8, offset + 8 + length)
    if (type === 'IHDR') {
      width = payload.readUInt32BE(0)
      height = payload.readUInt32BE(4)
      const bitDepth = payload.readUInt8(8)
      colorType = payload.readUInt8(9)
      if (bitDepth !== 8) throw new Error(`unsupported bit depth ${bitDepth}`)
      if (payload.readUInt8(12) !== 0) throw new Error('interlaced PNG unsupported')
      if (![0, 2, 6].includes(colorType)) {
        throw new Error(`unsupported color type ${colorType}`)
      }
    } else if (type === 'IDAT') {
      idat.push(payload)
    } else if (type === 'IEND') {
      break
    }
    offset += 12 + length
  }
  if (!width || !height) throw new Error('PNG missing IHDR')
  const bpp = colorType === 2 ? 3 : colorType === 6 ? 4 : 1
  const raw = zlib.inflateSync(Buffer.concat(idat))
  const pixels = unfilter(raw, width, height, bpp)
  const rgb = new Uint8Array(width * height * 3)
  for (let i = 0; i < width * height; i++) {
    if (bpp === 1) {
      rgb[3 * i] = rgb[3 * i + 1] = rgb[3 * i + 2] = pixels[i]
    } else {
      rgb[3 * i] = pixels[bpp * i]
      rgb[3 * i + 1] = pixels[bpp * i + 1]
      rgb[3 * i + 2] = pixels[bpp * i + 2]
    }
  }
  return { width, height, data: rgb }
}
