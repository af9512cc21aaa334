/**
 * Feature tensor files, bit-compatible with the pose pipeline's reader.
 *
 * Layout (little-endian): magic "DFM1"; version byte (1); dtype byte
 * (0 = float32); two reserved zero bytes; uint32 layer_id, channels,
 * height, width; then channels*height*width float32 values in C order
 * (channel-major, then row, then column).
 */

export const MAGIC = 'DFM1'
export const VERSION = 1
export const DTYPE_F32 = 0
const HEADER_BYTES = 24

export interface FeatureTensor {
  layerId: number
  channels: number
  height: number
  width: number
  /** length channels*height*width, C order */
  data: Float32Array
}

export function encodeDfm(t: FeatureTensor): Buffer {
  const expected = t.channels * t.height * t.width
  if (t.data.length !== expected) {
    throw new Error(`data length ${t.data.length} does not match dims (${expected})`)
  }
  for (let i = 0; i < t.data.length; i++) {
    if (!Number.isFinite(t.data[i])) throw new Error(`non-finite value at index ${i}`)
  }
  const buf = Buffer.alloc(HEADER_BYTES + 4 * expected)
  buf.write(MAGIC, 0, 'ascii')
  buf.writeUInt8(VERSION, 4)
  buf.writeUInt8(DTYPE_F32, 5)
  buf.writeUInt16LE(0, 6)
  buf.writeUInt32LE(t.layerId, 8)
  buf.writeUInt32LE(t.channels, 12)
  buf.writeUInt32LE(t.height, 16)
  buf.writeUInt32LE(t.width, 20)
  for (let i = 0; i < expected; i++) {
    buf.writeFloatLE(t.data[i], HEADER_BYTES + 4 * i)
  }
  return buf
}

export function decodeDfm(buf: Buffer): FeatureTensor {
  if (buf.length < HEADER_BYTES || buf.toString('ascii', 0, 4) !== MAGIC) {
    throw new Error('bad magic')
  }
  if (buf.readUInt8(4) !== VERSION) throw new Error('version mismatch')
  if (buf.readUInt8(5) !== DTYPE_F32) throw new Error('unsupported dtype')
  const layerId = buf.readUInt32LE(8)
  const channels = buf.readUInt32LE(12)
  const height = buf.readUInt32LE(16)
  const width = buf.readUInt32LE(20)
  const count = channels * height * width
  if (buf.length !== HEADER_BYTES + 4 * count) throw new Error('truncated file')
  const data = new Float32Array(count)
  for (let i = 0; i < count; i++) {
    data[i] = buf.readFloatLE(HEADER_BYTES + 4 * i)
    if (!Number.isFinite(data[i])) throw new Error(`non-finite value at index ${i}`)
  }
  return { layerId, channels, height, width, data }
}
