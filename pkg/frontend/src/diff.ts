/** Pixel-difference heat overlay between two equally sized RGBA buffers. */

export interface OverlayResult {
  data: Uint8ClampedArray<ArrayBuffer>; // RGBA, same dimensions as the inputs
  maxDiff: number; // max per-channel absolute difference observed (0..255)
}

export function diffOverlay(a: Uint8ClampedArray, b: Uint8ClampedArray, width: number, height: number): OverlayResult {
  const n = width * height * 4;
  if (a.length !== n || b.length !== n) {
    throw new Error(`buffer sizes ${a.length}/${b.length} do not match ${width}x${height} RGBA`);
  }
  const out = new Uint8ClampedArray(n);
  let maxDiff = 0;
  for (let i = 0; i < n; i += 4) {
    const dr = Math.abs((a[i] ?? 0) - (b[i] ?? 0));
    const dg = Math.abs((a[i + 1] ?? 0) - (b[i + 1] ?? 0));
    const db = Math.abs((a[i + 2] ?? 0) - (b[i + 2] ?? 0));
    const d = Math.max(dr, dg, db);
    if (d > maxDiff) maxDiff = d;
    // red heat ramp; fully transparent where identical
    out[i] = d > 0 ? 255 : 0;
    out[i + 1] = 0;
    out[i + 2] = 0;
    out[i + 3] = Math.min(255, d * 4);
  }
  return { data: out, maxDiff };
}

export function isAllZero(overlay: OverlayResult): boolean {
  return overlay.maxDiff === 0 && overlay.data.every((v) => v === 0);
}
