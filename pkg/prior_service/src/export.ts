/**
 * Batch exporter: run the provider over every training image of a scene and
 * write the file-backed prior layout the core ingests (one .pfm per view,
 * a grid of .femb crops per view, and a manifest of crop coordinates).
 */

import fs from "node:fs";
import path from "node:path";

import { RgbImage, readPng } from "./image.js";
import { ModelProvider } from "./providers.js";
import { writeFemb, writePfm } from "./files.js";

export interface ExportOptions {
  sceneDir: string;
  outDir: string;
  provider: ModelProvider;
  cropGrid?: number;
  cropSize?: number;
  log?: (line: string) => void;
}

export interface ExportReport {
  exported: string[];
  failed: { stem: string; error: string }[];
  manifestPath: string;
}

function cropImage(img: RgbImage, r0: number, c0: number, size: number): RgbImage {
  const data = new Float64Array(size * size * 3);
  for (let y = 0; y < size; y++) {
    for (let x = 0; x < size; x++) {
      for (let ch = 0; ch < 3; ch++) {
        data[(y * size + x) * 3 + ch] = img.data[((r0 + y) * img.width + c0 + x) * 3 + ch];
      }
    }
  }
  return { height: size, width: size, data };
}

export async function exportPriors(options: ExportOptions): Promise<ExportReport> {
  const grid = options.cropGrid ?? 2;
  const imageDir = path.join(options.sceneDir, "images");
  if (!fs.existsSync(imageDir)) {
    throw new Error(`scene has no images directory: ${imageDir}`);
  }
  fs.mkdirSync(options.outDir, { recursive: true });
  const names = fs.readdirSync(imageDir).filter((n) => n.toLowerCase().endsWith(".png")).sort();
  if (names.length === 0) {
    throw new Error(`no PNG images under ${imageDir}`);
  }

  const manifest: Record<string, Record<string, number[]>> = {};
  const report: ExportReport = { exported: [], failed: [], manifestPath: "" };

  for (const name of names) {
    const stem = name.replace(/\.png$/i, "");
    try {
      const image = readPng(path.join(imageDir, name));
      const depth = await options.provider.depth(image);
      writePfm(path.join(options.outDir, `${stem}.pfm`), depth,
               image.height, image.width);

      const crop = Math.min(options.cropSize ?? 126, image.height, image.width);
      const crops: Record<string, number[]> = {};
      for (let gr = 0; gr < grid; gr++) {
        for (let gc = 0; gc < grid; gc++) {
          const r0 = grid === 1 ? 0 : Math.round((gr * (image.height - crop)) / (grid - 1));
          const c0 = grid === 1 ? 0 : Math.round((gc * (image.width - crop)) / (grid - 1));
          const cropId = `${gr}_${gc}`;
          const emb = await options.provider.features(cropImage(image, r0, c0, crop));
          writeFemb(path.join(options.outDir, `${stem}.${cropId}.femb`), emb);
          crops[cropId] = [r0, c0, crop, crop];
        }
      }
      manifest[stem] = crops;
      report.exported.push(stem);
      options.log?.(`exported ${stem}`);
    } catch (err) {
      report.failed.push({ stem, error: (err as Error).message });
      options.log?.(`FAILED ${stem}: ${(err as Error).message}`);
    }
  }

  report.manifestPath = path.join(options.outDir, "manifest.json");
  fs.writeFileSync(report.manifestPath, JSON.stringify(manifest, null, 1) + "\n");
  return report;
}
