/** PFM and FEMB file codecs matching the core's on-disk formats. */

import fs from "node:fs";

import { floatBuffer, readFloats } from "./protocol.js";

export function writePfm(path: string, values: Float32Array, height: number,
                         width: number): void {
  if (values.length !== height * width) {
    throw new Error(`value count ${values.length} != ${height}x${width}`);
  }
  const header = Buffer.from(`Pf\n${width} ${height}\n-1.0\n`, "ascii");
  // PFM rows run bottom to top.
  const flipped = new Float32Array(values.length);
  for (let y = 0; y < height; y++) {
    flipped.set(values.subarray((height - 1 - y) * width, (height - y) * width),
                y * width);
  }
  fs.writeFileSync(path, Buffer.concat([header, floatBuffer(flipped)]));
}

export function readPfm(path: string): { height: number; width: number; values: Float32Array } {
  const raw = fs.readFileSync(path);
  let pos = 0;
  const token = () => {
    while (pos < raw.length && /\s/.test(String.fromCharCode(raw[pos]))) pos++;
    const start = pos;
    while (pos < raw.length && !/\s/.test(String.fromCharCode(raw[pos]))) pos++;
    return raw.subarray(start, pos).toString("ascii");
  };
  const magic = token();
  if (magic !== "Pf") {
    throw new Error(`not a grayscale PFM (${magic})`);
  }
  const width = parseInt(token(), 10);
  const height = parseInt(token(), 10);
  const scale = parseFloat(token());
  pos++; // single whitespace after the scale line
  const payload = raw.subarray(pos);
  if (payload.length !== 4 * width * height) {
    throw new Error(`PFM payload is ${payload.length} bytes, expected ${4 * width * height}`);
  }
  const flipped = new Float32Array(width * height);
  for (let i = 0; i < flipped.length; i++) {
    flipped[i] = scale < 0 ? payload.readFloatLE(i * 4) : payload.readFloatBE(i * 4);
  }
  const values = new Float32Array(width * height);
  for (let y = 0; y < height; y++) {
    values.set(flipped.subarray((height - 1 - y) * width, (height - y) * width),
               y * width);
  }
  return { height, width, values };
}

export function writeFemb(path: string, values: Float32Array): void {
  const head = Buffer.alloc(8);
  head.write("FEMB", 0, "ascii");
  head.writeUInt32LE(values.length, 4);
  fs.writeFileSync(path, Buffer.concat([head, floatBuffer(values)]));
}

export function readFemb(path: string): Float32Array {
  const raw = fs.readFileSync(path);
  if (raw.subarray(0, 4).toString("ascii") !== "FEMB") {
    throw new Error("not an embedding file");
  }
  const dim = raw.readUInt32LE(4);
  if (raw.length !== 8 + 4 * dim) {
    throw new Error(`embedding payload is ${raw.length - 8} bytes, expected ${4 * dim}`);
  }
  return readFloats(raw, dim, 8);
}
