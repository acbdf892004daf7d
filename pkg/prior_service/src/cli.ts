/** prior-service CLI: `serve --endpoint host:port` and `export --scene --out`. */

import { parseArgs } from "node:util";

import { exportPriors } from "./export.js";
import { makeProvider } from "./providers.js";
import { PriorServer } from "./server.js";

function parseEndpoint(endpoint: string): { host: string; port: number } {
  const idx = endpoint.lastIndexOf(":");
  if (idx <= 0) {
    throw new Error(`endpoint must be host:port, got ${endpoint}`);
  }
  return { host: endpoint.slice(0, idx), port: parseInt(endpoint.slice(idx + 1), 10) };
}

async function main(): Promise<number> {
  const [command, ...rest] = process.argv.slice(2);
  const options = {
    endpoint: { type: "string" as const, default: "127.0.0.1:7071" },
    provider: { type: "string" as const, default: "builtin" },
    "depth-model": { type: "string" as const },
    "feature-model": { type: "string" as const },
    device: { type: "string" as const },
    deterministic: { type: "boolean" as const, default: true },
    scene: { type: "string" as const },
    out: { type: "string" as const },
    "crop-grid": { type: "string" as const, default: "2" },
    "crop-size": { type: "string" as const, default: "126" },
  };
  const { values } = parseArgs({ args: rest, options });
  const provider = makeProvider(values.provider!, {
    depthModel: values["depth-model"],
    featureModel: values["feature-model"],
    device: values.device,
  });

  if (command === "serve") {
    const { host, port } = parseEndpoint(values.endpoint!);
    const server = new PriorServer({
      host, port, provider,
      deterministic: values.deterministic,
      log: (line) => console.log(line),
    });
    await server.listen();
    await new Promise(() => undefined);   // run until killed
    return 0;
  }

  if (command === "export") {
    if (!values.scene || !values.out) {
      console.error("export needs --scene and --out");
      return 2;
    }
    const report = await exportPriors({
      sceneDir: values.scene,
      outDir: values.out,
      provider,
      cropGrid: parseInt(values["crop-grid"]!, 10),
      cropSize: parseInt(values["crop-size"]!, 10),
      log: (line) => console.log(line),
    });
    console.log(`exported ${report.exported.length} views, `
      + `${report.failed.length} failed; manifest at ${report.manifestPath}`);
    return report.failed.length === 0 ? 0 : 1;
  }

  console.error("usage: prior-service serve|export [options]");
  return 2;
}

main().then((code) => {
  if (code !== 0) process.exit(code);
}).catch((err) => {
  console.error(err.message);
  process.exit(1);
});
