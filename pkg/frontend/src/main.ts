/**
 * Page wiring: file loading, mask painting, slider, request lifecycle.
 *
 * User state is only the mask layer and the alpha slider; source images
 * are never mutated. The reference pane is fetched once per image pair
 * (prompt-free request); mask/alpha edits debounce into /v1/fuse calls.
 */

import { FusionClient, FuseRequest, FuseResponse } from "./client";
import { MaskLayer, Stroke } from "./mask";
import { bytesToBase64, encodeGrayPng } from "./png";

const $ = <T extends HTMLElement>(id: string): T => {
  const el = document.getElementById(id);
  if (!el) throw new Error(`missing element #${id}`);
  return el as T;
};

const banner = $<HTMLDivElement>("banner");
const irCanvas = $<HTMLCanvasElement>("ir-canvas");
const paintCanvas = $<HTMLCanvasElement>("paint");
const baselinePane = $<HTMLImageElement>("baseline");
const fusedPane = $<HTMLImageElement>("fused");
const segPane = $<HTMLImageElement>("seg");
const alphaSlider = $<HTMLInputElement>("alpha");
const alphaValue = $<HTMLSpanElement>("alpha-value");
const brushSlider = $<HTMLInputElement>("brush");
const eraserBox = $<HTMLInputElement>("eraser");
const metricsEl = $<HTMLDivElement>("metrics");

interface Session {
  irB64: string | null;
  visB64: string | null;
  irImage: HTMLImageElement | null;
  visImage: HTMLImageElement | null;
  mask: MaskLayer | null;
}

const session: Session = {
  irB64: null,
  visB64: null,
  irImage: null,
  visImage: null,
  mask: null,
};

function showBanner(message: string): void {
  banner.textContent = message;
  banner.classList.add("visible");
}

function hideBanner(): void {
  banner.classList.remove("visible");
}

const client = new FusionClient({
  onResult: (res: FuseResponse) => {
    // last good result stays on screen until a newer one lands
    hideBanner();
    fusedPane.src = `data:image/png;base64,${res.fused}`;
    if (res.seg) segPane.src = `data:image/png;base64,${res.seg}`;
    metricsEl.textContent = Object.entries(res.metrics)
      .map(([k, v]) => `${k}=${v.toFixed(4)}`)
      .join("  ");
  },
  onError: (message) => showBanner(`fusion service: ${message}`),
});

function maskB64(): string | undefined {
  const mask = session.mask;
  if (!mask || mask.isEmpty()) return undefined;
  return bytesToBase64(encodeGrayPng(mask.raster(), mask.width, mask.height));
}

function buildRequest(): FuseRequest | null {
  if (!session.irB64 || !session.visB64) return null;
  const body: FuseRequest = {
    ir: session.irB64,
    vis: session.visB64,
    alpha: Number(alphaSlider.value),
  };
  const mask = maskB64();
  if (mask) body.mask = mask;
  return body;
}

function scheduleFuse(): void {
  const body = buildRequest();
  if (body) client.schedule(body);
}

function requestBaseline(): void {
  if (!session.irB64 || !session.visB64) return;
  // prompt-free reference: same pair, no mask
  const baseline = new FusionClient({
    onResult: (res) => {
      baselinePane.src = `data:image/png;base64,${res.fused}`;
    },
    onError: (message) => showBanner(`fusion service: ${message}`),
  });
  void baseline.send({ ir: session.irB64, vis: session.visB64, alpha: 0 });
}

function redrawPaintPane(): void {
  const ctx = paintCanvas.getContext("2d");
  if (!ctx || !session.visImage) return;
  ctx.drawImage(session.visImage, 0, 0);
  const mask = session.mask;
  if (!mask) return;
  const overlay = ctx.getImageData(0, 0, mask.width, mask.height);
  const raster = mask.raster();
  for (let i = 0; i < mask.width * mask.height; i++) {
    if (raster[i]) {
      overlay.data[i * 4] = Math.min(255, overlay.data[i * 4] + 110);
      overlay.data[i * 4 + 3] = 255;
    }
  }
  ctx.putImageData(overlay, 0, 0);
}

async function loadFile(file: File, kind: "ir" | "vis"): Promise<void> {
  const bytes = new Uint8Array(await file.arrayBuffer());
  const b64 = bytesToBase64(bytes);
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error(`cannot decode ${file.name}`));
    img.src = `data:image/png;base64,${b64}`;
  });
  if (kind === "ir") {
    session.irB64 = b64;
    session.irImage = img;
    irCanvas.width = img.width;
    irCanvas.height = img.height;
    irCanvas.getContext("2d")?.drawImage(img, 0, 0);
  } else {
    session.visB64 = b64;
    session.visImage = img;
    paintCanvas.width = img.width;
    paintCanvas.height = img.height;
    session.mask = new MaskLayer(img.width, img.height);
    redrawPaintPane();
  }
  if (session.irB64 && session.visB64) {
    requestBaseline();
    scheduleFuse();
  }
}

function canvasPoint(ev: MouseEvent): Stroke {
  const rect = paintCanvas.getBoundingClientRect();
  return {
    x: ((ev.clientX - rect.left) / rect.width) * paintCanvas.width,
    y: ((ev.clientY - rect.top) / rect.height) * paintCanvas.height,
    radius: Number(brushSlider.value),
    erase: eraserBox.checked,
  };
}

let strokePoints: Stroke[] = [];
let painting = false;

paintCanvas.addEventListener("mousedown", (ev) => {
  if (!session.mask) return;
  painting = true;
  strokePoints = [canvasPoint(ev)];
});

paintCanvas.addEventListener("mousemove", (ev) => {
  if (!painting || !session.mask) return;
  strokePoints.push(canvasPoint(ev));
  // live preview without committing to the undo stack
  const preview = session.mask;
  preview.stamp(strokePoints[strokePoints.length - 1]);
  redrawPaintPane();
});

window.addEventListener("mouseup", () => {
  if (!painting || !session.mask) return;
  painting = false;
  session.mask.applyStroke(strokePoints);
  strokePoints = [];
  redrawPaintPane();
  scheduleFuse();
});

$<HTMLButtonElement>("undo").addEventListener("click", () => {
  if (session.mask?.undo()) {
    redrawPaintPane();
    scheduleFuse();
  }
});

$<HTMLButtonElement>("clear").addEventListener("click", () => {
  session.mask?.clear();
  redrawPaintPane();
  scheduleFuse();
});

$<HTMLButtonElement>("fill").addEventListener("click", () => {
  session.mask?.fill();
  redrawPaintPane();
  scheduleFuse();
});

alphaSlider.addEventListener("input", () => {
  alphaValue.textContent = Number(alphaSlider.value).toFixed(1);
  scheduleFuse(); // alpha re-requests without repainting
});

$<HTMLInputElement>("ir-file").addEventListener("change", (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (file) void loadFile(file, "ir");
});

$<HTMLInputElement>("vis-file").addEventListener("change", (ev) => {
  const file = (ev.target as HTMLInputElement).files?.[0];
  if (file) void loadFile(file, "vis");
});
