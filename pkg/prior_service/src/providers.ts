/**
 * Model providers behind the service.
 *
 * "builtin" is a fully deterministic classical stand-in (multi-scale
 * luminance depth, pooled color-statistics features) that needs no
 * checkpoint and anchors all tests. "hf" runs pretrained monocular-depth
 * and vision-transformer feature models through transformers.js when the
 * models are available locally or downloadable; model ids are configurable.
 */

import { RgbImage, luminance, resizeBilinear, smooth } from "./image.js";

export interface ModelProvider {
  readonly name: string;
  depth(image: RgbImage): Promise<Float32Array>;     // length H*W of the input
  features(image: RgbImage): Promise<Float32Array>;  // fixed dim per provider
}

const FEATURE_GRID = 4;

export class BuiltinProvider implements ModelProvider {
  readonly name = "builtin";

  async depth(image: RgbImage): Promise<Float32Array> {
    const { height: h, width: w } = image;
    const lum = luminance(image);
    const radius = Math.max(1, Math.round(Math.min(h, w) / 10));
    const blurred = smooth(lum, h, w, radius);
    // Darker and lower image regions read as nearer; the row ramp keeps the
    // map non-constant on any input.
    const out = new Float32Array(h * w);
    for (let y = 0; y < h; y++) {
      const ramp = h === 1 ? 0 : y / (h - 1);
      for (let x = 0; x < w; x++) {
        out[y * w + x] = 0.75 * (1 - blurred[y * w + x]) + 0.25 * (1 - ramp);
      }
    }
    return out;
  }

  async features(image: RgbImage): Promise<Float32Array> {
    const { height: h, width: w } = image;
    const g = FEATURE_GRID;
    const out = new Float32Array(3 * (2 + g * g));
    let k = 0;
    for (let ch = 0; ch < 3; ch++) {
      let sum = 0;
      let sumSq = 0;
      for (let i = 0; i < h * w; i++) {
        const v = image.data[i * 3 + ch];
        sum += v;
        sumSq += v * v;
      }
      const mean = sum / (h * w);
      const variance = Math.max(0, sumSq / (h * w) - mean * mean);
      out[k++] = mean;
      out[k++] = Math.sqrt(variance);
      for (let gy = 0; gy < g; gy++) {
        const y0 = Math.floor((h * gy) / g);
        const y1 = Math.floor((h * (gy + 1)) / g);
        for (let gx = 0; gx < g; gx++) {
          const x0 = Math.floor((w * gx) / g);
          const x1 = Math.floor((w * (gx + 1)) / g);
          let cell = 0;
          let count = 0;
          for (let y = y0; y < Math.max(y1, y0 + 1); y++) {
            for (let x = x0; x < Math.max(x1, x0 + 1); x++) {
              cell += image.data[(Math.min(y, h - 1) * w + Math.min(x, w - 1)) * 3 + ch];
              count++;
            }
          }
          out[k++] = cell / count - mean;
        }
      }
    }
    return out;
  }
}

export interface HfProviderOptions {
  depthModel?: string;
  featureModel?: string;
  device?: string;
}

/** Pretrained models via transformers.js; loaded lazily on first use. */
export class HfProvider implements ModelProvider {
  readonly name = "hf";
  private depthModel: string;
  private featureModel: string;
  private device: string | undefined;
  private depthPipe: any = null;
  private featurePipe: any = null;

  constructor(options: HfProviderOptions = {}) {
    this.depthModel = options.depthModel ?? "onnx-community/depth-anything-v2-small";
    this.featureModel = options.featureModel ?? "Xenova/dino-vitb16";
    this.device = options.device;
  }

  private async transformers(): Promise<any> {
    const specifier = "@huggingface/transformers";
    try {
      return await import(specifier);
    } catch (err) {
      throw new Error("the hf provider needs the optional @huggingface/transformers "
        + `package: ${(err as Error).message}`);
    }
  }

  private async toRawImage(image: RgbImage) {
    const { RawImage } = await this.transformers();
    const bytes = new Uint8ClampedArray(image.height * image.width * 3);
    for (let i = 0; i < image.height * image.width * 3; i++) {
      bytes[i] = Math.max(0, Math.min(255, Math.round(image.data[i] * 255)));
    }
    return new RawImage(bytes, image.width, image.height, 3);
  }

  async depth(image: RgbImage): Promise<Float32Array> {
    if (!this.depthPipe) {
      const { pipeline } = await this.transformers();
      this.depthPipe = await pipeline("depth-estimation", this.depthModel,
                                      this.device ? { device: this.device } : {});
    }
    const raw = await this.toRawImage(image);
    const result = await this.depthPipe(raw);
    const tensor = (Array.isArray(result) ? result[0] : result).predicted_depth;
    const [mh, mw] = tensor.dims.slice(-2);
    const resized = resizeBilinear(Float64Array.from(tensor.data as Float32Array),
                                   mh, mw, image.height, image.width);
    return Float32Array.from(resized);
  }

  async features(image: RgbImage): Promise<Float32Array> {
    if (!this.featurePipe) {
      const { pipeline } = await this.transformers();
      this.featurePipe = await pipeline("image-feature-extraction", this.featureModel,
                                        this.device ? { device: this.device } : {});
    }
    const raw = await this.toRawImage(image);
    // Pooled whole-patch embedding: one vector per request.
    const tensor = await this.featurePipe(raw, { pooling: "mean" });
    return Float32Array.from(tensor.data as Float32Array);
  }
}

export function makeProvider(name: string, options: HfProviderOptions = {}): ModelProvider {
  if (name === "builtin") {
    return new BuiltinProvider();
  }
  if (name === "hf") {
    return new HfProvider(options);
  }
  throw new Error(`unknown provider ${name} (expected builtin or hf)`);
}
