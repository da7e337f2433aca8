/**
 * Typed client for the what-if prediction service.
 *
 * All numbers shown anywhere in the explorer come out of these response
 * types; the UI never computes outcomes itself.
 */

export interface GridInfo {
  levels_n: number;
  levels_b: number;
}

export interface CountyInfo {
  county_id: string;
  lat: number;
  lon: number;
  median_income: number;
  pop_density: number;
  pct_black: number;
  population: number;
}

export interface CountiesResponse {
  grid: GridInfo;
  counties: CountyInfo[];
}

export interface CoefficientSummary {
  mean: number;
  ci_low: number;
  ci_high: number;
}

export interface CoefficientsResponse {
  county_id: string;
  coefficients: Record<string, CoefficientSummary>;
}

export interface PredictRequest {
  county_id: string;
  n: number;
  b: number;
  want_interval?: boolean;
  s?: number;
}

export interface PredictResponse {
  county_id: string;
  n: number;
  b: number;
  mean: number;
  ci_low: number;
  ci_high: number;
  coefficients: Record<string, number>;
}

/** Error carrying the HTTP status so the UI can surface 400/404 inline. */
export class ApiError extends Error {
  constructor(readonly status: number, message: string) {
    super(message);
    this.name = "ApiError";
  }
}

async function parseOrThrow<T>(response: Response): Promise<T> {
  if (!response.ok) {
    let detail = `HTTP ${response.status}`;
    try {
      const body = (await response.json()) as { detail?: string };
      if (body.detail) detail = body.detail;
    } catch {
      // non-JSON error body; keep the status text
    }
    throw new ApiError(response.status, detail);
  }
  return (await response.json()) as T;
}

export class ApiClient {
  constructor(readonly baseUrl: string, readonly sampleSeed = 0) {}

  private headers(): Record<string, string> {
    return {
      "Content-Type": "application/json",
      "X-Sample-Seed": String(this.sampleSeed),
    };
  }

  async counties(signal?: AbortSignal): Promise<CountiesResponse> {
    const response = await fetch(`${this.baseUrl}/counties`, { signal });
    return parseOrThrow<CountiesResponse>(response);
  }

  async coefficients(countyId: string, signal?: AbortSignal): Promise<CoefficientsResponse> {
    const response = await fetch(
      `${this.baseUrl}/coefficients/${encodeURIComponent(countyId)}`,
      { headers: this.headers(), signal },
    );
    return parseOrThrow<CoefficientsResponse>(response);
  }

  async predict(request: PredictRequest, signal?: AbortSignal): Promise<PredictResponse> {
    const response = await fetch(`${this.baseUrl}/predict`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(request),
      signal,
    });
    return parseOrThrow<PredictResponse>(response);
  }
}
