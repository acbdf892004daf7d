/** Minimal blocking-style protocol client (used by tests and diagnostics). */

import net from "node:net";

import {
  MAGIC, MSG_DEPTH, MSG_FEATURES, encodeRequest, readFloats,
} from "./protocol.js";

export class PriorClient {
  private socket: net.Socket | null = null;
  private pending: Buffer = Buffer.alloc(0);
  private waiter: (() => void) | null = null;
  private ended = false;

  constructor(private host: string, private port: number) {}

  async connect(): Promise<void> {
    const socket = net.createConnection({ host: this.host, port: this.port });
    this.socket = socket;
    socket.on("data", (chunk: Buffer) => {
      this.pending = Buffer.concat([this.pending, chunk]);
      this.waiter?.();
    });
    socket.on("close", () => {
      this.ended = true;
      this.waiter?.();
    });
    await new Promise<void>((resolve, reject) => {
      socket.once("connect", resolve);
      socket.once("error", reject);
    });
    socket.write(MAGIC);
    const echo = await this.read(MAGIC.length);
    if (!echo.equals(MAGIC)) {
      throw new Error(`bad handshake echo: ${echo.toString("hex")}`);
    }
  }

  close(): void {
    this.socket?.destroy();
  }

  /** Raw bytes in, raw response bytes of a known length out. */
  async roundtripRaw(request: Buffer, responseLength: number): Promise<Buffer> {
    this.socket!.write(request);
    return this.read(responseLength);
  }

  async depth(height: number, width: number, pixels: Float32Array): Promise<Float32Array> {
    this.socket!.write(encodeRequest(MSG_DEPTH, height, width, pixels));
    const head = await this.read(8);
    const h = head.readUInt32LE(0);
    const w = head.readUInt32LE(4);
    if (h !== height || w !== width) {
      throw new Error(`depth response ${w}x${h} does not match request ${width}x${height}`);
    }
    const payload = await this.read(4 * h * w);
    return readFloats(payload, h * w);
  }

  async features(height: number, width: number, pixels: Float32Array): Promise<Float32Array> {
    this.socket!.write(encodeRequest(MSG_FEATURES, height, width, pixels));
    const head = await this.read(4);
    const dim = head.readUInt32LE(0);
    if (dim === 0 || dim > 1 << 24) {
      throw new Error(`implausible embedding dimension ${dim}`);
    }
    const payload = await this.read(4 * dim);
    return readFloats(payload, dim);
  }

  async read(n: number): Promise<Buffer> {
    while (this.pending.length < n) {
      if (this.ended) {
        throw new Error(`connection closed with ${this.pending.length}/${n} bytes`);
      }
      await new Promise<void>((resolve) => {
        this.waiter = resolve;
      });
      this.waiter = null;
    }
    const out = this.pending.subarray(0, n);
    this.pending = this.pending.subarray(n);
    return Buffer.from(out);
  }
}
