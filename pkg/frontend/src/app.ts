/** Browser wiring for the guidance explorer. All math happens server-side. */

import { ApiClient, Mode, Scales } from "./api.js";
import { InferController } from "./controller.js";
import { diffOverlay } from "./diff.js";
import { HistoryEntry, SCALE_MAX, SCALE_MIN, SCALE_STEP, SessionState } from "./state.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

function pngSrc(b64: string): string {
  return `data:image/png;base64,${b64}`;
}

async function imageDataFromB64(b64: string): Promise<ImageData> {
  const img = new Image();
  await new Promise<void>((resolve, reject) => {
    img.onload = () => resolve();
    img.onerror = () => reject(new Error("PNG decode failed"));
    img.src = pngSrc(b64);
  });
  const canvas = document.createElement("canvas");
  canvas.width = img.naturalWidth;
  canvas.height = img.naturalHeight;
  const ctx = canvas.getContext("2d")!;
  ctx.drawImage(img, 0, 0);
  return ctx.getImageData(0, 0, canvas.width, canvas.height);
}

export function start(): void {
  const state = new SessionState((window.localStorage.getItem("gramsr.baseUrl") ?? "http://localhost:8731"));
  let client = new ApiClient(state.baseUrl);
  let controller: InferController;
  const compareSelection: number[] = [];

  const banner = el<HTMLDivElement>("banner");
  const historyList = el<HTMLUListElement>("history");
  const compareCanvas = el<HTMLCanvasElement>("compare-canvas");
  const compareButton = el<HTMLButtonElement>("compare-btn");
  const maxDiffLabel = el<HTMLSpanElement>("compare-maxdiff");

  function showError(message: string): void {
    banner.textContent = `service error: ${message}`;
    banner.style.display = "block";
  }

  el<HTMLButtonElement>("banner-retry").addEventListener("click", () => {
    banner.style.display = "none";
    controller.resetDedupe();
    void controller.request(state.scales);
  });

  function renderPair(): void {
    const { current, previous } = state.latestPair();
    if (current) el<HTMLImageElement>("sr-current").src = pngSrc(current.imageB64);
    if (previous) el<HTMLImageElement>("sr-previous").src = pngSrc(previous.imageB64);
    el<HTMLSpanElement>("timing").textContent = current ? `${current.timingsMs.toFixed(1)} ms` : "";
  }

  function renderHistoryRow(entry: HistoryEntry): void {
    const li = document.createElement("li");
    const thumb = document.createElement("img");
    thumb.src = pngSrc(entry.imageB64);
    thumb.className = "thumb";
    const label = document.createElement("span");
    label.textContent = `#${entry.index} pix=${entry.scales.pix.toFixed(2)} sem=${entry.scales.sem.toFixed(2)} gram=${entry.scales.gram.toFixed(2)} (${entry.mode})`;
    const replay = document.createElement("button");
    replay.textContent = "replay";
    replay.addEventListener("click", () => void controller.replay(entry.index));
    const pick = document.createElement("button");
    pick.textContent = "compare";
    pick.addEventListener("click", () => {
      compareSelection.push(entry.index);
      while (compareSelection.length > 2) compareSelection.shift();
      compareButton.disabled = compareSelection.length !== 2;
      pick.classList.add("picked");
    });
    li.append(thumb, label, replay, pick);
    historyList.prepend(li);
  }

  async function renderCompare(): Promise<void> {
    const [ia, ib] = compareSelection;
    const a = ia !== undefined ? state.entryAt(ia) : null;
    const b = ib !== undefined ? state.entryAt(ib) : null;
    if (!a || !b) return;
    const [da, db] = await Promise.all([imageDataFromB64(a.imageB64), imageDataFromB64(b.imageB64)]);
    if (da.width !== db.width || da.height !== db.height) {
      showError("compared results have different dimensions");
      return;
    }
    const overlay = diffOverlay(new Uint8ClampedArray(da.data), new Uint8ClampedArray(db.data), da.width, da.height);
    compareCanvas.width = da.width;
    compareCanvas.height = da.height;
    const ctx = compareCanvas.getContext("2d")!;
    ctx.putImageData(da, 0, 0);
    ctx.putImageData(new ImageData(overlay.data, da.width, da.height), 0, 0);
    maxDiffLabel.textContent = `max |diff| = ${overlay.maxDiff}`;
  }
  compareButton.addEventListener("click", () => void renderCompare());

  controller = new InferController(client, state, {
    onResult: (entry) => {
      banner.style.display = "none";
      renderPair();
      renderHistoryRow(entry);
    },
    onError: showError,
  });

  for (const name of ["pix", "sem", "gram"] as const) {
    const slider = el<HTMLInputElement>(`scale-${name}`);
    slider.min = String(SCALE_MIN);
    slider.max = String(SCALE_MAX);
    slider.step = String(SCALE_STEP);
    slider.value = String(state.scales[name]);
    const label = el<HTMLSpanElement>(`scale-${name}-value`);
    label.textContent = slider.value;
    slider.addEventListener("input", () => {
      label.textContent = slider.value;
      controller.onScaleChange({ ...state.scales, [name]: Number(slider.value) });
    });
  }

  el<HTMLSelectElement>("mode").addEventListener("change", (ev) => {
    state.mode = (ev.target as HTMLSelectElement).value as Mode;
    controller.resetDedupe();
    void controller.request(state.scales);
  });

  const baseUrlInput = el<HTMLInputElement>("base-url");
  baseUrlInput.value = state.baseUrl;
  baseUrlInput.addEventListener("change", () => {
    state.baseUrl = baseUrlInput.value;
    window.localStorage.setItem("gramsr.baseUrl", state.baseUrl);
    client = new ApiClient(state.baseUrl);
    controller = new InferController(client, state, {
      onResult: (entry) => {
        banner.style.display = "none";
        renderPair();
        renderHistoryRow(entry);
      },
      onError: showError,
    });
  });

  el<HTMLInputElement>("file").addEventListener("change", async (ev) => {
    const file = (ev.target as HTMLInputElement).files?.[0];
    if (!file) return;
    const buf = new Uint8Array(await file.arrayBuffer());
    let binary = "";
    buf.forEach((byte) => (binary += String.fromCharCode(byte)));
    state.lqImageB64 = btoa(binary);
    el<HTMLImageElement>("lq-view").src = pngSrc(state.lqImageB64);
    controller.resetDedupe();
    void controller.request(state.scales);
  });
}

if (typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", start);
}
