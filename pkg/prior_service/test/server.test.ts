/** Live-socket checks: framing arithmetic, determinism, error paths. */

import assert from "node:assert/strict";
import { after, before, test } from "node:test";

import { PriorClient } from "../src/client.js";
import { BuiltinProvider } from "../src/providers.js";
import { MAGIC, encodeRequest, MSG_DEPTH } from "../src/protocol.js";
import { PriorServer } from "../src/server.js";

let server: PriorServer;
let port: number;

before(async () => {
  server = new PriorServer({
    host: "127.0.0.1", port: 0, provider: new BuiltinProvider(),
    deterministic: true,
  });
  port = await server.listen();
});

after(async () => {
  await server.close();
});

function rampImage(h: number, w: number): Float32Array {
  const pixels = new Float32Array(h * w * 3);
  for (let i = 0; i < h * w; i++) {
    pixels[i * 3] = (i % w) / w;
    pixels[i * 3 + 1] = Math.floor(i / w) / h;
    pixels[i * 3 + 2] = 0.25;
  }
  return pixels;
}

test("handshake then a 16x16 depth request returns exactly 8 + 16*16*4 bytes", async () => {
  const client = new PriorClient("127.0.0.1", port);
  await client.connect();
  const request = encodeRequest(MSG_DEPTH, 16, 16, rampImage(16, 16));
  const response = await client.roundtripRaw(request, 8 + 16 * 16 * 4);
  assert.equal(response.readUInt32LE(0), 16);
  assert.equal(response.readUInt32LE(4), 16);
  client.close();
});

test("identical requests produce byte-identical responses", async () => {
  const client = new PriorClient("127.0.0.1", port);
  await client.connect();
  const request = encodeRequest(MSG_DEPTH, 12, 10, rampImage(12, 10));
  const first = await client.roundtripRaw(request, 8 + 12 * 10 * 4);
  const second = await client.roundtripRaw(request, 8 + 12 * 10 * 4);
  assert.deepEqual(first, second);
  client.close();
});

test("depth output is finite and non-constant", async () => {
  const client = new PriorClient("127.0.0.1", port);
  await client.connect();
  const values = await client.depth(20, 24, rampImage(20, 24));
  let min = Infinity, max = -Infinity;
  for (const v of values) {
    assert.ok(Number.isFinite(v));
    min = Math.min(min, v);
    max = Math.max(max, v);
  }
  assert.ok(max > min, "depth map is constant");
  client.close();
});

test("feature responses carry a stable dimension", async () => {
  const client = new PriorClient("127.0.0.1", port);
  await client.connect();
  const a = await client.features(16, 16, rampImage(16, 16));
  const b = await client.features(24, 20, rampImage(24, 20));
  assert.equal(a.length, b.length);
  assert.ok(a.length > 0);
  client.close();
});

test("unknown message type gets an error frame", async () => {
  const client = new PriorClient("127.0.0.1", port);
  await client.connect();
  const bogus = Buffer.alloc(9);
  bogus.writeUInt8(7, 0);
  bogus.writeUInt32LE(1, 1);
  bogus.writeUInt32LE(1, 5);
  const head = await client.roundtripRaw(bogus, 5);
  assert.equal(head.readUInt8(0), 0xff);
  const length = head.readUInt32LE(1);
  const message = (await client.read(length)).toString("utf-8");
  assert.match(message, /unknown message type/);
  client.close();
});

test("implausible dimensions get an error frame echoing the type", async () => {
  const client = new PriorClient("127.0.0.1", port);
  await client.connect();
  const bad = Buffer.alloc(9);
  bad.writeUInt8(MSG_DEPTH, 0);
  bad.writeUInt32LE(0, 1);
  bad.writeUInt32LE(5, 5);
  const head = await client.roundtripRaw(bad, 5);
  assert.equal(head.readUInt8(0), MSG_DEPTH);
  client.close();
});

test("wrong handshake magic closes the connection", async () => {
  const net = await import("node:net");
  const socket = net.createConnection({ host: "127.0.0.1", port });
  await new Promise<void>((resolve) => socket.once("connect", () => resolve()));
  socket.write(Buffer.from("WRONG", "ascii"));
  const closed = await new Promise<boolean>((resolve) => {
    socket.once("close", () => resolve(true));
    setTimeout(() => resolve(false), 2000);
  });
  assert.ok(closed, "server kept a bad-handshake connection open");
  assert.notDeepEqual(Buffer.from("WRONG", "ascii"), MAGIC);
});
