/**
 * SIDP1 stream protocol framing. Little-endian throughout.
 *
 * handshake: client sends "SIDP1", server echoes it.
 * request:   [msg_type u8: 1=depth, 2=features][height u32][width u32]
 *            [f32 x H*W*3, row-major RGB in [0,1]]
 * response:  depth    -> [height u32][width u32][f32 x H*W]
 *            features -> [dim u32][f32 x dim]
 * error:     [msg_type echo | 0xFF][length u32][UTF-8 message]
 */

export const MAGIC = Buffer.from("SIDP1", "ascii");
export const MSG_DEPTH = 1;
export const MSG_FEATURES = 2;
export const ERROR_TAG = 0xff;

export interface Request {
  msgType: number;
  height: number;
  width: number;
  /** Row-major RGB, length height * width * 3. */
  pixels: Float32Array;
}

export function encodeRequest(msgType: number, height: number, width: number,
                              pixels: Float32Array): Buffer {
  if (pixels.length !== height * width * 3) {
    throw new Error(`pixel count ${pixels.length} != ${height}x${width}x3`);
  }
  const head = Buffer.alloc(9);
  head.writeUInt8(msgType, 0);
  head.writeUInt32LE(height, 1);
  head.writeUInt32LE(width, 5);
  return Buffer.concat([head, floatBuffer(pixels)]);
}

export function decodeRequestHeader(head: Buffer): { msgType: number; height: number; width: number } {
  return {
    msgType: head.readUInt8(0),
    height: head.readUInt32LE(1),
    width: head.readUInt32LE(5),
  };
}

export function encodeDepthResponse(height: number, width: number,
                                    values: Float32Array): Buffer {
  if (values.length !== height * width) {
    throw new Error(`depth count ${values.length} != ${height}x${width}`);
  }
  const head = Buffer.alloc(8);
  head.writeUInt32LE(height, 0);
  head.writeUInt32LE(width, 4);
  return Buffer.concat([head, floatBuffer(values)]);
}

export function encodeFeaturesResponse(values: Float32Array): Buffer {
  const head = Buffer.alloc(4);
  head.writeUInt32LE(values.length, 0);
  return Buffer.concat([head, floatBuffer(values)]);
}

export function encodeError(tag: number, message: string): Buffer {
  const payload = Buffer.from(message, "utf-8");
  const head = Buffer.alloc(5);
  head.writeUInt8(tag, 0);
  head.writeUInt32LE(payload.length, 1);
  return Buffer.concat([head, payload]);
}

/** Float32Array -> little-endian bytes regardless of host endianness. */
export function floatBuffer(values: Float32Array): Buffer {
  const buf = Buffer.alloc(values.length * 4);
  for (let i = 0; i < values.length; i++) {
    buf.writeFloatLE(values[i], i * 4);
  }
  return buf;
}

export function readFloats(buf: Buffer, count: number, offset = 0): Float32Array {
  const out = new Float32Array(count);
  for (let i = 0; i < count; i++) {
    out[i] = buf.readFloatLE(offset + i * 4);
  }
  return out;
}
