/**
 * TCP server for the SIDP1 prior protocol.
 *
 * One request at a time per connection; concurrent connections allowed but
 * model access is serialized so responses are reproducible. Malformed input
 * gets an error frame and the connection is closed.
 */

import net from "node:net";

import { RgbImage } from "./image.js";
import { ModelProvider } from "./providers.js";
import {
  ERROR_TAG, MAGIC, MSG_DEPTH, MSG_FEATURES,
  encodeDepthResponse, encodeError, encodeFeaturesResponse, readFloats,
} from "./protocol.js";

const MAX_DIM = 8192;

export interface ServerOptions {
  host: string;
  port: number;
  provider: ModelProvider;
  deterministic?: boolean;
  log?: (line: string) => void;
}

class ByteQueue {
  private chunks: Buffer[] = [];
  private size = 0;
  private waiter: (() => void) | null = null;
  private closed = false;

  push(chunk: Buffer) {
    this.chunks.push(chunk);
    this.size += chunk.length;
    this.waiter?.();
  }

  close() {
    this.closed = true;
    this.waiter?.();
  }

  /** Resolves with exactly n bytes, or null if the stream ended first. */
  async read(n: number): Promise<Buffer | null> {
    while (this.size < n) {
      if (this.closed) {
        return null;
      }
      await new Promise<void>((resolve) => {
        this.waiter = resolve;
      });
      this.waiter = null;
    }
    const out = Buffer.allocUnsafe(n);
    let off = 0;
    while (off < n) {
      const head = this.chunks[0];
      const take = Math.min(head.length, n - off);
      head.copy(out, off, 0, take);
      off += take;
      if (take === head.length) {
        this.chunks.shift();
      } else {
        this.chunks[0] = head.subarray(take);
      }
    }
    this.size -= n;
    return out;
  }
}

export class PriorServer {
  private server: net.Server;
  private modelLock: Promise<unknown> = Promise.resolve();

  constructor(private options: ServerOptions) {
    this.server = net.createServer((socket) => this.handle(socket));
  }

  async listen(): Promise<number> {
    await new Promise<void>((resolve, reject) => {
      this.server.once("error", reject);
      this.server.listen(this.options.port, this.options.host, resolve);
    });
    const addr = this.server.address() as net.AddressInfo;
    this.options.log?.(`listening on ${this.options.host}:${addr.port} `
      + `(provider ${this.options.provider.name})`);
    return addr.port;
  }

  async close(): Promise<void> {
    await new Promise<void>((resolve) => this.server.close(() => resolve()));
  }

  /** Serialize provider calls: one inference at a time process-wide. */
  private withModel<T>(fn: () => Promise<T>): Promise<T> {
    const next = this.modelLock.then(fn, fn);
    this.modelLock = next.catch(() => undefined);
    return next;
  }

  private async handle(socket: net.Socket): Promise<void> {
    const queue = new ByteQueue();
    socket.on("data", (chunk: Buffer) => queue.push(chunk));
    socket.on("error", () => queue.close());
    socket.on("close", () => queue.close());

    const magic = await queue.read(MAGIC.length);
    if (magic === null || !magic.equals(MAGIC)) {
      socket.destroy();
      return;
    }
    socket.write(MAGIC);

    for (;;) {
      const head = await queue.read(9);
      if (head === null) {
        socket.destroy();
        return;
      }
      const msgType = head.readUInt8(0);
      const height = head.readUInt32LE(1);
      const width = head.readUInt32LE(5);
      if (msgType !== MSG_DEPTH && msgType !== MSG_FEATURES) {
        socket.end(encodeError(ERROR_TAG, `unknown message type ${msgType}`));
        return;
      }
      if (height === 0 || width === 0 || height > MAX_DIM || width > MAX_DIM) {
        socket.end(encodeError(msgType, `implausible dimensions ${width}x${height}`));
        return;
      }
      const payload = await queue.read(4 * height * width * 3);
      if (payload === null) {
        socket.destroy();
        return;
      }
      const pixels = readFloats(payload, height * width * 3);
      const image: RgbImage = {
        height, width, data: Float64Array.from(pixels),
      };
      try {
        if (msgType === MSG_DEPTH) {
          const values = await this.withModel(() => this.options.provider.depth(image));
          if (values.length !== height * width) {
            throw new Error(`provider returned ${values.length} values for `
              + `${width}x${height}`);
          }
          socket.write(encodeDepthResponse(height, width, values));
        } else {
          const values = await this.withModel(() => this.options.provider.features(image));
          socket.write(encodeFeaturesResponse(values));
        }
      } catch (err) {
        socket.end(encodeError(msgType, `inference failed: ${(err as Error).message}`));
        return;
      }
    }
  }
}
