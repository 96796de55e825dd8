/** HTTP client for the inference service. All restoration happens server-side. */

export type Mode = "literal" | "residual";

export interface Scales {
  pix: number;
  sem: number;
  gram: number;
}

export interface InferRequestBody {
  image: string;
  lambda_pix: number;
  lambda_sem: number;
  lambda_gram: number;
  mode: Mode;
}

export interface InferResult {
  image: string;
  timings_ms: number;
  scales: { lambda_pix: number; lambda_sem: number; lambda_gram: number };
  mode: Mode;
}

export interface HealthDoc {
  stage: number;
  codec_stride: number;
  encoder_seeds: { conditioning: number; gram: number };
  uptime_seconds: number;
}

export function requestBody(imageB64: string, scales: Scales, mode: Mode): InferRequestBody {
  return {
    image: imageB64,
    lambda_pix: scales.pix,
    lambda_sem: scales.sem,
    lambda_gram: scales.gram,
    mode,
  };
}

export class ApiClient {
  constructor(
    public baseUrl: string,
    private fetchFn: typeof fetch = fetch,
  ) {}

  async infer(imageB64: string, scales: Scales, mode: Mode): Promise<InferResult> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/infer`, {
      method: "POST",
      headers: { "Content-Type": "application/json" },
      body: JSON.stringify(requestBody(imageB64, scales, mode)),
    });
    if (!resp.ok) {
      const detail = await resp.text();
      throw new Error(`infer failed (${resp.status}): ${detail}`);
    }
    return (await resp.json()) as InferResult;
  }

  async health(): Promise<HealthDoc> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/health`);
    if (!resp.ok) throw new Error(`health failed (${resp.status})`);
    return (await resp.json()) as HealthDoc;
  }

  async model(): Promise<Record<string, unknown>> {
    const resp = await this.fetchFn(`${this.baseUrl}/api/model`);
    if (!resp.ok) throw new Error(`model failed (${resp.status})`);
    return (await resp.json()) as Record<string, unknown>;
  }
}
